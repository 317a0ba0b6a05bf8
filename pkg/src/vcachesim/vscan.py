"""Windowed Prime+Probe contention monitoring.

Each monitored set is primed into the LLC by a same-domain helper (with a
prober-side L2 mirror, so a later LLC eviction back-invalidates the mirror
and becomes visible to the prober), left alone for a window while tenants
run, then probed in reverse order with timed non-allocating reads. A probe
finding a line deeper than the LLC counts it evicted; timer-spike readings
are excluded from the denominator. Per-set rates (percent of lines evicted
per millisecond of window) feed EWMAs, and the window self-adjusts:
saturated cycles shrink it, silent cycles reset it.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from . import tenants, timing
from .cache import LLC
from .clock import ms_to_ns
from .context import SimContext
from .errors import ValidationError
from .evset import EvictionSet

SPIKE_GUARD_SIGMA = 8.0


@dataclass
class MonitorConfig:
    interval_ms: float = 1000.0   # cycle cadence
    window_ms: float = 7.0        # initial wait between prime and probe
    min_window_ms: float = 1.0
    shrink_ms: float = 1.0
    f: int = 4                    # sets monitored per partition
    alpha: float = 0.3            # EWMA weight of the newest sample
    adaptive: bool = True         # False pins the window (sweeps want this)

    def __post_init__(self):
        if self.window_ms <= 0 or self.min_window_ms <= 0:
            raise ValidationError("windows must be positive")
        if self.min_window_ms > self.window_ms:
            raise ValidationError("min_window_ms exceeds window_ms")
        if not 0 < self.alpha <= 1:
            raise ValidationError("alpha must be in (0, 1]")
        if self.f < 1:
            raise ValidationError("f must be >= 1")


@dataclass
class MonitoredSet:
    evset: EvictionSet
    domain: int = 0
    ewma: float = 0.0
    seeded: bool = False

    @property
    def color(self) -> int:
        return self.evset.color


@dataclass
class SetSample:
    set_id: int
    domain: int
    color: int
    evicted: int
    unknown: int
    total: int
    window_ms: float
    rate: float
    violated: bool

    @property
    def counted(self) -> int:
        return self.total - self.unknown

    @property
    def full(self) -> bool:
        return self.counted > 0 and self.evicted == self.counted


@dataclass
class CycleReport:
    index: int
    t_start_ms: float
    window_ms: float              # window in force during this cycle
    window_after_ms: float        # window after the adjustment rule
    samples: List[SetSample] = field(default_factory=list)

    @property
    def total_evicted(self) -> int:
        return sum(s.evicted for s in self.samples)

    @property
    def all_full(self) -> bool:
        return bool(self.samples) and all(s.full for s in self.samples)


def ewma_update(prev: float, sample: float, alpha: float,
                seeded: bool) -> float:
    """First sample seeds the average; later samples blend in with weight
    alpha."""
    if not seeded:
        return sample
    return alpha * sample + (1.0 - alpha) * prev


def adjust_window(window_ms: float, report: CycleReport,
                  config: MonitorConfig) -> float:
    """Saturated cycle (every set fully evicted) -> shrink; completely quiet
    cycle -> reset to the configured width; otherwise keep."""
    if report.all_full:
        return max(config.min_window_ms, window_ms - config.shrink_ms)
    if report.total_evicted == 0:
        return config.window_ms
    return window_ms


class ContentionMonitor:
    """Drives prime/wait/probe cycles over a family of monitored sets while
    tenant workloads run; pausable (in-VM) workloads are stopped for the
    duration of each cycle, co-tenants never stop."""

    def __init__(self, ctx: SimContext, sets: Sequence[EvictionSet],
                 config: Optional[MonitorConfig] = None,
                 workloads: Sequence[tenants.TenantWorkload] = (),
                 domains: Optional[Sequence[int]] = None):
        if not sets:
            raise ValidationError("nothing to monitor")
        self.ctx = ctx
        self.config = config or MonitorConfig()
        self.workloads = list(workloads)
        if domains is None:
            dom = ctx.state.actor_domain(ctx.prober)
            domains = [dom] * len(sets)
        if len(domains) != len(sets):
            raise ValidationError("domains list must match sets list")
        self.sets = [MonitoredSet(evset=s, domain=d)
                     for s, d in zip(sets, domains)]
        self.window_ms = self.config.window_ms
        self.cycles_run = 0
        self._spike_floor = (ctx.model.memory
                             + SPIKE_GUARD_SIGMA * ctx.model.jitter)
        self._paused = {w.actor for w in self.workloads if w.pausable}

    # -- phases ------------------------------------------------------------

    def prime(self, mset: MonitoredSet) -> int:
        """Install every member in the LLC with a prober-L2 mirror; returns
        the prime duration (ns). The prober touches first — pushing its old
        spill victims out while the cell is still unprimed — then the helper
        pulls every member into the LLC. Probes then read the L2 mirror
        without refilling anything: an LLC eviction back-invalidates the
        mirror line, so a probe miss is the eviction signal."""
        prober, helper = self.ctx.pair_for_domain(mset.domain)
        t0 = self.ctx.clock.now_ns
        self.ctx.batch_access(mset.evset.members, actor=prober)
        self.ctx.batch_pull(mset.evset.members, owner=prober, helper=helper)
        return self.ctx.clock.now_ns - t0

    def probe(self, mset: MonitoredSet) -> Tuple[int, int]:
        """Timed re-accesses in reverse prime order; returns (evicted,
        unknown). Unknown = spike-guarded readings."""
        ctx = self.ctx
        prober, _ = ctx.pair_for_domain(mset.domain)
        ctx.warm()
        evicted = unknown = 0
        for member in reversed(mset.evset.members):
            lat = ctx.measure_latency(member, actor=prober)
            # strictly above: a jitter-free read at exactly the memory base
            # is a plain slow read, not a timer spike
            if lat > self._spike_floor:
                unknown += 1
            elif timing.classify_level(lat, ctx.thresholds) > LLC:
                evicted += 1
        return evicted, unknown

    # -- cycles ------------------------------------------------------------

    def _step_tenants(self, until_ns: int, paused=frozenset()) -> None:
        if until_ns <= self.ctx.clock.now_ns:
            return  # cycle overran the interval; nothing left to idle
        if self.workloads:
            tenants.step(self.ctx.state, self.ctx.clock, self.workloads,
                         until_ns, paused=paused)
        else:
            self.ctx.clock.now_ns = until_ns

    def monitor_cycle(self) -> CycleReport:
        ctx = self.ctx
        cfg = self.config
        window = self.window_ms
        report = CycleReport(index=self.cycles_run,
                             t_start_ms=ctx.clock.now_ms,
                             window_ms=window, window_after_ms=window)
        window_ns = ms_to_ns(window)
        for sid, mset in enumerate(self.sets):
            ctx.warm()
            prime_ns = self.prime(mset)
            self._step_tenants(ctx.clock.now_ns + window_ns,
                               paused=self._paused)
            evicted, unknown = self.probe(mset)
            total = len(mset.evset.members)
            counted = total - unknown
            pct = 100.0 * evicted / counted if counted else 0.0
            rate = pct / window
            mset.ewma = ewma_update(mset.ewma, rate, cfg.alpha, mset.seeded)
            mset.seeded = True
            report.samples.append(SetSample(
                set_id=sid, domain=mset.domain, color=mset.color,
                evicted=evicted, unknown=unknown, total=total,
                window_ms=window, rate=rate,
                violated=prime_ns > window_ns))
        if cfg.adaptive:
            self.window_ms = adjust_window(window, report, cfg)
        report.window_after_ms = self.window_ms
        self.cycles_run += 1
        return report

    def run(self, n_cycles: int) -> List[CycleReport]:
        reports = []
        for _ in range(n_cycles):
            start = self.ctx.clock.now_ns
            reports.append(self.monitor_cycle())
            # idle remainder of the interval: everything runs, nothing paused
            self._step_tenants(start + ms_to_ns(self.config.interval_ms))
        return reports

    # -- aggregates ----------------------------------------------------------

    def rates_by_color(self) -> Dict[int, float]:
        acc: Dict[int, List[float]] = {}
        for m in self.sets:
            acc.setdefault(m.color, []).append(m.ewma)
        return {c: sum(v) / len(v) for c, v in sorted(acc.items())}

    def rates_by_domain(self) -> Dict[int, float]:
        acc: Dict[int, List[float]] = {}
        for m in self.sets:
            acc.setdefault(m.domain, []).append(m.ewma)
        return {d: sum(v) / len(v) for d, v in sorted(acc.items())}
