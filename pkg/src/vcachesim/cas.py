"""Contention-aware task placement.

LLC domains are ranked into tiers by their monitored eviction-rate EWMAs
(quantile split, lowest contention = tier 0). Tier membership is sticky: a
domain moves only after its rate has trended the same direction for three
consecutive intervals. Placement prefers an idle vCPU in the best tier,
then the task's previous vCPU, then its previous domain. The baseline used
for comparison is contention-blind round-robin over idle vCPUs.
"""

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from . import tenants
from .cache import CacheGeometry, LLC
from .context import make_context, register_tenant
from .errors import ValidationError
from .evset import build_all_at_offset, pool_size
from .mem import FragmentationProfile
from .rng import child_rng
from .vscan import ContentionMonitor, MonitorConfig

TREND_STREAK = 3
TREND_DEADBAND = 1e-12
PULL_UTIL_THRESHOLD = 0.9


def tier_domains(rates: Dict[int, float], n_tiers: int = 2) -> Dict[int, int]:
    """Quantile split of domains by ascending rate; ties break on domain id
    so equal-rate domains order deterministically."""
    if not rates:
        return {}
    order = sorted(rates, key=lambda d: (rates[d], d))
    n = len(order)
    return {d: min(i * n_tiers // n, n_tiers - 1)
            for i, d in enumerate(order)}


class TierController:
    """Hysteresis gate around tier_domains: the initial assignment is
    immediate, after that a domain re-tiers only on a 3-interval same-sign
    rate trend (deadband suppresses float noise)."""

    def __init__(self, n_tiers: int = 2, streak: int = TREND_STREAK,
                 deadband: float = TREND_DEADBAND):
        self.n_tiers = n_tiers
        self.streak_needed = streak
        self.deadband = deadband
        self.tiers: Optional[Dict[int, int]] = None
        self.changes = 0
        self._last: Dict[int, float] = {}
        self._sign: Dict[int, int] = {}
        self._count: Dict[int, int] = {}

    def update(self, rates: Dict[int, float]) -> Dict[int, int]:
        if self.tiers is None:
            self.tiers = tier_domains(rates, self.n_tiers)
            self._last = dict(rates)
            self._sign = {d: 0 for d in rates}
            self._count = {d: 0 for d in rates}
            return dict(self.tiers)
        for d, r in sorted(rates.items()):
            delta = r - self._last.get(d, r)
            sign = 0 if abs(delta) <= self.deadband else (1 if delta > 0 else -1)
            if sign != 0 and sign == self._sign.get(d):
                self._count[d] = self._count.get(d, 0) + 1
            else:
                self._count[d] = 1 if sign else 0
            self._sign[d] = sign
            self._last[d] = r
        desired = tier_domains(rates, self.n_tiers)
        for d, want in desired.items():
            have = self.tiers.get(d, want)
            if want != have and self._count.get(d, 0) >= self.streak_needed:
                self.tiers[d] = want
                self.changes += 1
                self._count[d] = 0
        return dict(self.tiers)


def select_cpu(free: Set[int], tiers: Dict[int, int],
               vcpu_domain: Sequence[int],
               prev: Optional[int]) -> Optional[int]:
    """Placement order: idle vCPU in a best-tier domain (preferring the
    previous vCPU when it qualifies), else the previous vCPU, else an idle
    vCPU in the previous domain, else nothing (the task waits)."""
    if not free:
        return None
    best = min(tiers.values()) if tiers else 0
    best_doms = {d for d, t in tiers.items() if t == best}
    in_best = [v for v in sorted(free) if vcpu_domain[v] in best_doms]
    if in_best:
        return prev if prev in in_best else in_best[0]
    if prev is not None:
        if prev in free:
            return prev
        same_dom = [v for v in sorted(free)
                    if vcpu_domain[v] == vcpu_domain[prev]]
        if same_dom:
            return same_dom[0]
    return None


def baseline_select(free: Set[int], n_vcpus: int,
                    cursor: int) -> Tuple[Optional[int], int]:
    """Contention-blind round-robin over idle vCPUs."""
    if not free:
        return None, cursor
    for k in range(n_vcpus):
        v = (cursor + k) % n_vcpus
        if v in free:
            return v, (v + 1) % n_vcpus
    return None, cursor


def allow_pull(dst_tier: int, src_tier: int, src_util: float,
               threshold: float = PULL_UTIL_THRESHOLD) -> bool:
    """Load-balancing gate: a worse-tier domain may pull work from a
    better-tier one only when the source is nearly saturated."""
    if dst_tier <= src_tier:
        return True
    return src_util >= threshold


# ---- steering scenario -------------------------------------------------------

@dataclass
class Task:
    name: str
    duty: float
    pinned: Optional[int] = None
    sensitive: bool = False
    prev: Optional[int] = None
    run_slots: int = 0
    domain_slots: Counter = field(default_factory=Counter)


@dataclass
class SteeringRow:
    interval: int
    task: str
    domain: int
    tier: int


@dataclass
class SteeringResult:
    policy: str
    rows: List[SteeringRow]
    residency: Dict[str, float]        # task -> fraction of run slots on dom 0
    tier_changes: int
    rates: List[Dict[int, float]]      # per-interval domain EWMAs

    def residency_of(self, name: str) -> float:
        return self.residency[name]


def _steering_geometry() -> CacheGeometry:
    return CacheGeometry(l2_ways=4, l2_sets=64, llc_ways=4, llc_sets=128,
                         n_slices=2)


def build_domain_sets(ctx, domain: int, f: int, safety: int = 2):
    """Have the domain's own worker pair build f LLC eviction sets."""
    ctx.set_focus(domain)
    try:
        pool = ctx.alloc_pages(pool_size(ctx.geometry, LLC, safety)
                               // max(1, ctx.geometry.n_l2_colors))
        report = build_all_at_offset(
            ctx, LLC, 0, [p << 12 for p in pool], max_sets=f)
        if len(report.sets) < f:
            raise ValidationError(
                f"domain {domain}: built {len(report.sets)}/{f} sets")
        return report.sets
    finally:
        ctx.set_focus(0)


def run_steering_scenario(seed: int, policy: str = "cas",
                          intervals: int = 25, slots: int = 20,
                          interval_ms: float = 10.0,
                          window_ms: float = 2.0,
                          f_per_domain: int = 2,
                          polluter_rate: float = 600.0,
                          geometry: Optional[CacheGeometry] = None
                          ) -> SteeringResult:
    """Two LLC domains x four vCPUs, a polluter pinned to domain 0, one
    sensitive task plus two normal tasks, and pinned filler tasks churning
    on both domains. Returns placement rows and the sensitive task's
    residency on the polluted domain."""
    if policy not in ("cas", "baseline"):
        raise ValidationError(f"unknown policy {policy!r}")
    g = geometry or _steering_geometry()
    topo = tenants.VTopology(vcpu_domain=[0, 0, 0, 0, 1, 1, 1, 1])
    ctx = make_context(g, FragmentationProfile("fragmented", 1.0),
                       guest_pages=4096, seed=seed, topology=topo)
    sets, domains = [], []
    for d in (0, 1):
        for s in build_domain_sets(ctx, d, f_per_domain):
            sets.append(s)
            domains.append(d)

    polluter_actor = 100
    register_tenant(ctx, polluter_actor, domain=0)
    llc_lines = g.llc_sets * g.llc_ways * g.n_slices
    polluter = tenants.TenantWorkload(
        kind="polluter", actor=polluter_actor, rate_per_ms=polluter_rate,
        region_base_page=ctx.tmap.host_pages + 65536,
        region_pages=max(1, llc_lines // 64))
    monitor = ContentionMonitor(
        ctx, sets, MonitorConfig(interval_ms=interval_ms, window_ms=window_ms,
                                 f=f_per_domain),
        workloads=[polluter], domains=domains)

    tasks = [Task("filler0", 0.55, pinned=0), Task("filler1", 0.55, pinned=1),
             Task("filler4", 0.55, pinned=4), Task("filler5", 0.55, pinned=5),
             Task("sensitive", 0.5, sensitive=True),
             Task("normal_a", 0.7), Task("normal_b", 0.7)]
    controller = TierController(n_tiers=2)
    act_rng = child_rng(seed, "activation")
    cursor = 0
    rows: List[SteeringRow] = []
    rate_trace: List[Dict[int, float]] = []

    for interval in range(intervals):
        monitor.run(1)
        rates = monitor.rates_by_domain()
        rate_trace.append(rates)
        tiers = controller.update(rates)
        interval_doms: Dict[str, Counter] = {t.name: Counter() for t in tasks}
        for _ in range(slots):
            free = set(range(topo.n_vcpus))
            for t in tasks:
                active = act_rng.random() < t.duty
                if not active:
                    continue
                if t.pinned is not None:
                    v = t.pinned if t.pinned in free else None
                elif policy == "cas":
                    v = select_cpu(free, tiers, topo.vcpu_domain, t.prev)
                else:
                    v, cursor = baseline_select(free, topo.n_vcpus, cursor)
                if v is None:
                    continue
                free.discard(v)
                t.prev = v
                t.run_slots += 1
                dom = topo.vcpu_domain[v]
                t.domain_slots[dom] += 1
                interval_doms[t.name][dom] += 1
        for t in tasks:
            if interval_doms[t.name]:
                dom = interval_doms[t.name].most_common(1)[0][0]
                rows.append(SteeringRow(interval, t.name, dom,
                                        tiers.get(dom, 0)))

    residency = {t.name: (t.domain_slots[0] / t.run_slots
                          if t.run_slots else 0.0) for t in tasks}
    return SteeringResult(policy=policy, rows=rows, residency=residency,
                          tier_changes=controller.changes, rates=rate_trace)
