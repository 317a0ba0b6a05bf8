"""Co-tenant traffic generators, vCPU topology, and cross-core helpers.

Workloads inject accesses on the logical clock at a fixed rate. Event order
is (time, actor id, schedule sequence), so runs are reproducible regardless
of how the caller slices the timeline.

Workload kinds:
  polluter    streams distinct lines across a large region (uniform sets)
  poisoner    confines accesses to pages of chosen color zones (HPA bits
              [15:12]); the heavy per-zone contention source
  idle        nothing
  file-scan   sequential page-sized reads over a region
  reuse-loop  loops over a fixed working set

pausable=True marks a VM-internal workload (monitor cycles pause those);
co-tenant workloads keep running during cycles.
"""

import heapq
from dataclasses import dataclass, field
from random import Random
from typing import List, Optional, Sequence

from .cache import CacheState, LINE_SHIFT, PAGE_SHIFT
from .clock import LogicalClock
from .errors import InferenceAmbiguous, ValidationError

_KINDS = ("polluter", "poisoner", "idle", "file-scan", "reuse-loop")

LINES_PER_PAGE = 1 << (PAGE_SHIFT - LINE_SHIFT)


@dataclass
class VTopology:
    """vCPU -> LLC-domain assignment; visible=False forces inference."""
    vcpu_domain: List[int]
    visible: bool = True
    intra_cycles: float = 40.0
    cross_cycles: float = 120.0
    jitter: float = 2.0

    @property
    def n_vcpus(self) -> int:
        return len(self.vcpu_domain)

    @property
    def n_domains(self) -> int:
        return max(self.vcpu_domain) + 1

    def domains(self) -> List[List[int]]:
        groups = [[] for _ in range(self.n_domains)]
        for v, d in enumerate(self.vcpu_domain):
            groups[d].append(v)
        return groups


@dataclass
class TenantWorkload:
    kind: str
    actor: int
    rate_per_ms: float
    region_base_page: int = 0
    region_pages: int = 1024
    colors: tuple = ()
    start_ms: float = 0.0
    stop_ms: float = float("inf")
    pausable: bool = False
    _cursor: int = field(default=0, repr=False)
    _pages: Optional[list] = field(default=None, repr=False)
    _next_ns: int = field(default=-1, repr=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown workload kind: {self.kind}")
        if self.kind != "idle" and self.rate_per_ms <= 0:
            raise ValidationError("rate_per_ms must be positive")
        if self.kind == "poisoner" and not self.colors:
            raise ValidationError("poisoner needs target colors")

    def period_ns(self) -> int:
        return max(1, int(round(1_000_000 / self.rate_per_ms)))

    def rebind_zone(self) -> None:
        """Re-derive the zone page list after a `colors` change."""
        self._pages = None
        self._cursor = 0

    def _zone_pages(self) -> list:
        """Host pages inside the region whose L2 color is targeted."""
        if self._pages is None:
            lo = self.region_base_page
            hi = lo + self.region_pages
            allowed = set(self.colors)
            self._pages = [p for p in range(lo, hi) if (p & 0xF) in allowed]
            if not self._pages:
                raise ValidationError("poisoner region holds no such colors")
        return self._pages

    def next_hpa(self) -> Optional[int]:
        """Next address to inject, advancing the workload cursor."""
        kind = self.kind
        if kind == "idle":
            return None
        if kind == "poisoner":
            pages = self._zone_pages()
            n_lines = len(pages) * LINES_PER_PAGE
            i = self._cursor % n_lines
            self._cursor += 1
            # walk offsets in the outer loop so every row of the zone heats
            offset, page_i = divmod(i, len(pages))
            return (pages[page_i] << PAGE_SHIFT) | ((offset % LINES_PER_PAGE) << LINE_SHIFT)
        n_lines = self.region_pages * LINES_PER_PAGE
        if kind == "reuse-loop":
            i = self._cursor % n_lines
            self._cursor += 1
            return (self.region_base_page << PAGE_SHIFT) + (i << LINE_SHIFT)
        if kind == "file-scan":
            page = self.region_base_page + (self._cursor % self.region_pages)
            self._cursor += 1
            return page << PAGE_SHIFT
        # polluter
        i = self._cursor % n_lines
        self._cursor += 1
        return (self.region_base_page << PAGE_SHIFT) + (i << LINE_SHIFT)


def step(state: CacheState, clock: LogicalClock,
         workloads: Sequence[TenantWorkload], until_ns: int,
         paused: Optional[set] = None,
         trace: Optional[list] = None) -> int:
    """Run workload injections up to until_ns, then set the clock there.

    Returns the number of accesses injected. Paused actors are skipped and
    their schedules fast-forwarded, mirroring a workload frozen for the
    duration.
    """
    if until_ns < clock.now_ns:
        raise ValidationError("step target is in the past")
    heap = []
    for wl in workloads:
        if wl.kind == "idle":
            continue
        if paused and wl.actor in paused and wl.pausable:
            continue
        if wl._next_ns < 0:
            wl._next_ns = int(wl.start_ms * 1_000_000)
        start = max(clock.now_ns, wl._next_ns)
        stop = wl.stop_ms * 1_000_000
        if start >= until_ns or start >= stop:
            continue
        heapq.heappush(heap, (start, wl.actor, clock.next_seq(), wl))
    injected = 0
    while heap:
        t, actor, _, wl = heapq.heappop(heap)
        if t >= until_ns:
            break
        hpa = wl.next_hpa()
        if hpa is not None:
            if wl.kind == "file-scan":
                for i in range(LINES_PER_PAGE):
                    state.access_level(actor, hpa + (i << LINE_SHIFT))
                injected += LINES_PER_PAGE
            else:
                state.access_level(actor, hpa)
                injected += 1
            if trace is not None:
                trace.append((t, actor, hpa))
        nxt = t + wl.period_ns()
        wl._next_ns = nxt
        if nxt < until_ns and nxt < wl.stop_ms * 1_000_000:
            heapq.heappush(heap, (nxt, actor, clock.next_seq(), wl))
    clock.now_ns = until_ns
    return injected


def shared_pull(state: CacheState, hpa: int, helper: int, owner: int) -> bool:
    """Helper vCPU touches a shared line: installed in its domain's LLC on
    top of any private copy. Helpers in another LLC domain cannot pull;
    returns False and leaves state untouched."""
    if state.actor_domain(helper) != state.actor_domain(owner):
        return False
    state.llc_install(state.actor_domain(owner), hpa, owner)
    return True


# ---- topology inference ------------------------------------------------------


def synth_latency_matrix(topology: VTopology, rng: Random) -> List[List[float]]:
    """Pairwise line-transfer latencies with Gaussian jitter."""
    n = topology.n_vcpus
    m = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            base = (topology.intra_cycles
                    if topology.vcpu_domain[i] == topology.vcpu_domain[j]
                    else topology.cross_cycles)
            v = max(1.0, rng.gauss(base, topology.jitter))
            m[i][j] = m[j][i] = v
    return m


def infer_topology(matrix: Sequence[Sequence[float]]) -> List[List[int]]:
    """Single-link clustering of a symmetric latency matrix.

    Splits at the largest gap in the sorted pair latencies when that gap
    dominates (at least half the spread and 3x the runner-up gap); an
    all-alike matrix is a single domain; anything in between raises
    InferenceAmbiguous.
    """
    n = len(matrix)
    if n < 2:
        return [[0]] if n else []
    vals = sorted(matrix[i][j] for i in range(n) for j in range(i + 1, n))
    spread = vals[-1] - vals[0]
    mean = sum(vals) / len(vals)
    if spread <= 0.25 * mean:
        return [sorted(range(n))]
    gaps = [(vals[i + 1] - vals[i], i) for i in range(len(vals) - 1)]
    gaps.sort(reverse=True)
    gmax, gi = gaps[0]
    g2 = gaps[1][0] if len(gaps) > 1 else 0.0
    if gmax < 0.5 * spread or (g2 > 0 and gmax < 3.0 * g2):
        raise InferenceAmbiguous("no clear intra/cross latency gap")
    threshold = (vals[gi] + vals[gi + 1]) / 2.0
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if matrix[i][j] < threshold:
                parent[find(i)] = find(j)
    groups = {}
    for v in range(n):
        groups.setdefault(find(v), []).append(v)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def effective_domains(topology: VTopology, rng: Random) -> List[List[int]]:
    """Domain groups as the guest can learn them: directly when the host
    exposes the topology, otherwise inferred from measured transfers."""
    if topology.visible:
        return topology.domains()
    return infer_topology(synth_latency_matrix(topology, rng))
