"""Shared simulation context: cache state, translation map, clock, timing,
actor/topology bookkeeping, and derived RNG streams.

Logical access costs (nanoseconds) follow line-transfer scale so prime and
probe phases occupy realistic fractions of a monitoring window: a batched
(MLP) access or helper pull costs 160 ns, a timed access 170 ns.
"""

import weakref
from dataclasses import dataclass, field
from random import Random
from typing import Dict, List, Optional, Sequence, Tuple

from . import cache, mem, tenants, timing
from .cache import CacheGeometry, CacheState, L2, LLC, MEMORY
from .clock import LogicalClock
from .errors import ValidationError
from .rng import child_rng

PULL_COST_NS = 160
BATCH_COST_NS = 160
MEASURE_COST_NS = 170

PAGE_SHIFT = mem.PAGE_SHIFT
OFFSETS_PER_PAGE = 64  # aligned line offsets 0x0 .. 0xFC0

# most recently wired context, for post-mortem state dumps on aborts
_LAST_CONTEXT: Optional["weakref.ReferenceType"] = None


def last_context() -> Optional["SimContext"]:
    return _LAST_CONTEXT() if _LAST_CONTEXT is not None else None


@dataclass
class SimContext:
    geometry: CacheGeometry
    state: CacheState
    tmap: mem.TranslationMap
    clock: LogicalClock
    model: timing.LatencyModel
    timer: timing.TimerState
    thresholds: timing.Thresholds
    topology: tenants.VTopology
    seed: int
    rounds: int = 0          # 0 = per-policy default
    confirm: int = 0         # 0 = per-policy default
    noise_rng: Random = None
    _alloc_cursor: int = 0
    _resolve_cache: Dict[int, int] = field(default_factory=dict)
    _resolve_version: int = -1
    domain_groups: List[List[int]] = None

    _focus: int = 0

    def __post_init__(self):
        if self.noise_rng is None:
            self.noise_rng = self.child_rng("timing-noise")
        if self.domain_groups is None:
            self.domain_groups = tenants.effective_domains(
                self.topology, self.child_rng("topology-probe"))

    # ---- rng --------------------------------------------------------------

    def child_rng(self, *labels) -> Random:
        return child_rng(self.seed, *labels)

    # ---- policy knobs -------------------------------------------------------

    @property
    def test_rounds(self) -> int:
        if self.rounds:
            return self.rounds
        return 6 if self.geometry.replacement == "random" else 2

    @property
    def test_confirm(self) -> int:
        if self.confirm:
            return self.confirm
        return 2 if self.geometry.replacement == "random" else 1

    # ---- actors -------------------------------------------------------------

    @property
    def prober(self) -> int:
        return self.domain_groups[self._focus][0]

    def set_focus(self, domain: int) -> None:
        """Make `prober` (and default batch actors) come from this domain's
        vCPU group — lets each domain build and probe its own LLC."""
        for i, group in enumerate(self.domain_groups):
            if self.topology.vcpu_domain[group[0]] == domain:
                self._focus = i
                return
        raise ValidationError(f"no vCPU group in domain {domain}")

    def pair_for_domain(self, domain: int) -> Tuple[int, Optional[int]]:
        """(prober, helper) vCPUs of a domain; helper None when the domain
        has a single vCPU (single-thread fallback)."""
        for group in self.domain_groups:
            if self.state.actor_domain(group[0]) == domain or \
                    self.topology.vcpu_domain[group[0]] == domain:
                if len(group) >= 2:
                    return group[0], group[1]
                return group[0], None
        raise ValidationError(f"no vCPUs in domain {domain}")

    def helper_for(self, owner: int) -> Optional[int]:
        dom = self.state.actor_domain(owner)
        for group in self.domain_groups:
            if self.topology.vcpu_domain[group[0]] == dom:
                for v in group:
                    if v != owner:
                        return v
        return None

    def worker_pairs(self, domain: int, n_pairs: int) -> List[Tuple[int, int]]:
        group = [v for v in range(self.topology.n_vcpus)
                 if self.topology.vcpu_domain[v] == domain]
        pairs = [(group[i], group[i + 1]) for i in range(0, len(group) - 1, 2)]
        if not pairs:
            raise ValidationError("worker pairs need >= 2 vCPUs in the domain")
        return pairs[:max(1, n_pairs)]

    # ---- address helpers ------------------------------------------------------

    def alloc_pages(self, n: int) -> List[int]:
        """Hand out n fresh guest page numbers."""
        if self._alloc_cursor + n > self.tmap.guest_pages:
            raise ValidationError(
                f"guest address space exhausted ({self.tmap.guest_pages} pages)")
        pages = list(range(self._alloc_cursor, self._alloc_cursor + n))
        self._alloc_cursor += n
        return pages

    def resolve_page(self, gva_page: int) -> int:
        """GVA page -> HPA page, cached per translation-map version."""
        if self._resolve_version != self.tmap.version:
            self._resolve_cache.clear()
            self._resolve_version = self.tmap.version
        hpa = self._resolve_cache.get(gva_page)
        if hpa is None:
            hpa = self.tmap.gva_page_to_hpa_page(gva_page)
            self._resolve_cache[gva_page] = hpa
        return hpa

    def resolve(self, gva: int) -> int:
        return (self.resolve_page(gva >> PAGE_SHIFT) << PAGE_SHIFT) \
            | (gva & 0xFFF)

    @staticmethod
    def addr(page: int, offset: int = 0) -> int:
        return (page << PAGE_SHIFT) | offset

    def install_map(self, tmap: mem.TranslationMap) -> None:
        """Atomically swap in a remapped translation."""
        self.tmap = tmap

    # ---- access paths ----------------------------------------------------------

    def touch(self, gva: int, actor: Optional[int] = None) -> int:
        a = self.prober if actor is None else actor
        level = self.state.access_level(a, self.resolve(gva))
        self.clock.advance_ns(BATCH_COST_NS)
        return level

    def batch_access(self, gvas: Sequence[int], actor: Optional[int] = None) -> None:
        """Plain batched accesses by the prober (L2-level testing)."""
        a = self.prober if actor is None else actor
        access = self.state.access_level
        resolve = self.resolve
        for g in gvas:
            access(a, resolve(g))
        self.clock.advance_ns(BATCH_COST_NS * len(gvas))

    def batch_pull(self, gvas: Sequence[int], owner: Optional[int] = None,
                   helper: Optional[int] = None) -> None:
        """LLC-level batch: a same-domain helper pulls each line into the
        LLC. Falls back to plain accesses when no helper exists."""
        o = self.prober if owner is None else owner
        h = self.helper_for(o) if helper is None else helper
        if h is None:
            self.batch_access(gvas, actor=o)
            return
        dom = self.state.actor_domain(o)
        install = self.state.llc_install
        resolve = self.resolve
        for g in gvas:
            install(dom, resolve(g), o)
        self.clock.advance_ns(PULL_COST_NS * len(gvas))

    def pull_llc(self, gva: int, owner: Optional[int] = None) -> bool:
        o = self.prober if owner is None else owner
        h = self.helper_for(o)
        if h is None:
            return False
        ok = tenants.shared_pull(self.state, self.resolve(gva), h, o)
        self.clock.advance_ns(PULL_COST_NS)
        return ok

    def measure(self, gva: int, actor: Optional[int] = None) -> int:
        """Timed non-allocating probe read; returns the classified level."""
        a = self.prober if actor is None else actor
        res = timing.measure_probe(self.state, a, self.resolve(gva),
                                   self.model, self.timer, self.clock,
                                   self.noise_rng)
        self.clock.advance_ns(MEASURE_COST_NS)
        return timing.classify_level(res.latency, self.thresholds)

    def measure_latency(self, gva: int, actor: Optional[int] = None) -> float:
        a = self.prober if actor is None else actor
        res = timing.measure_probe(self.state, a, self.resolve(gva),
                                   self.model, self.timer, self.clock,
                                   self.noise_rng)
        self.clock.advance_ns(MEASURE_COST_NS)
        return res.latency

    def warm(self) -> None:
        if not self.timer.is_warm(self.clock.now_us):
            timing.warm_timer(self.timer, self.clock, MEASURE_COST_NS)

    # ---- oracle layer ------------------------------------------------------------

    def oracle_color(self, gva: int, level: int) -> int:
        return mem.oracle_color(self.tmap, gva, level, self.geometry)

    def oracle_cell(self, gva: int) -> Tuple[int, int]:
        """(LLC set index, slice) of a guest address: its contention cell."""
        hpa = self.resolve(gva)
        return (cache.set_index(self.geometry, LLC, hpa),
                cache.slice_of(self.geometry, hpa))

    def oracle_row(self, gva: int) -> int:
        return cache.set_index(self.geometry, LLC, self.resolve(gva))

    def peek_level(self, gva: int, actor: Optional[int] = None) -> int:
        a = self.prober if actor is None else actor
        return self.state.peek_level(a, self.resolve(gva))


def make_context(geometry: CacheGeometry,
                 profile: mem.FragmentationProfile,
                 guest_pages: int,
                 seed: int,
                 topology: Optional[tenants.VTopology] = None,
                 model: Optional[timing.LatencyModel] = None,
                 timer: Optional[timing.TimerState] = None,
                 n_tenant_cores: int = 8,
                 calibrate: bool = False,
                 rounds: int = 0,
                 confirm: int = 0) -> SimContext:
    """Wire up a full simulation context.

    vCPU i runs pinned on core i; tenant actors get cores after the vCPUs
    (tenant actor id = 100 + k lives on core n_vcpus + k, domain chosen when
    the scenario registers it).
    """
    if topology is None:
        topology = tenants.VTopology(vcpu_domain=[0, 0])
    tmap = mem.build_translation(guest_pages, profile,
                                 child_rng(seed, "translation"))
    n_vcpus = topology.n_vcpus
    core_domain = list(topology.vcpu_domain)
    for k in range(n_tenant_cores):
        core_domain.append(k % topology.n_domains)
    state = CacheState(geometry, n_cores=n_vcpus + n_tenant_cores,
                       core_domain=core_domain,
                       seed=child_rng(seed, "replacement").randrange(2 ** 31))
    for v in range(n_vcpus):
        state.register_actor(v, core=v)
    model = model or timing.LatencyModel()
    timer = timer or timing.TimerState()
    clock = LogicalClock()
    ctx = SimContext(geometry=geometry, state=state, tmap=tmap, clock=clock,
                     model=model, timer=timer,
                     thresholds=timing.default_thresholds(model),
                     topology=topology, seed=seed, rounds=rounds,
                     confirm=confirm)
    if calibrate:
        scratch_base = (tmap.host_pages + 1024) << PAGE_SHIFT
        stride = geometry.l2_sets << cache.LINE_SHIFT
        scratch = [scratch_base + k * stride
                   for k in range(geometry.l2_ways + 1)]
        ctx.thresholds = timing.calibrate_thresholds(
            state, ctx.prober, model, timer, clock,
            ctx.child_rng("calibration"), scratch)
    global _LAST_CONTEXT
    _LAST_CONTEXT = weakref.ref(ctx)
    return ctx


def register_tenant(ctx: SimContext, actor: int, domain: int = 0) -> None:
    """Give a tenant actor its own core in the chosen LLC domain."""
    n_vcpus = ctx.topology.n_vcpus
    for core in range(n_vcpus, ctx.state.n_cores):
        if ctx.state.core_domain[core] == domain \
                and core not in ctx.state._actor_core.values():
            ctx.state.register_actor(actor, core=core)
            return
    raise ValidationError(f"no free tenant core in domain {domain}")
