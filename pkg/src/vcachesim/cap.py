"""Virtual-color-aware page-cache allocation.

Bulk page-cache traffic (file scans) is steered into the most contended
virtual color so it lands where the cache is already ruined, leaving cooler
colors to latency-sensitive working sets ("absorption"). Ranking comes from
per-color eviction-rate EWMAs; allocation drains the hottest color's free
list first and only then advances. When the established hottest color has
been demoted for three consecutive intervals the page cache is reclaimed
wholesale so allocations can re-confine to the new hot zone.
"""

from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from . import tenants
from .cache import CacheGeometry, L2, LLC, LINE_SHIFT, color_of
from .context import SimContext, make_context, register_tenant
from .errors import ValidationError
from .evset import build_parallel, pool_size
from .mem import FragmentationProfile
from .vcol import ColoredFreeLists, build_color_filters, classify_page_parallel, refill
from .vscan import ContentionMonitor, MonitorConfig

DEMOTE_STREAK = 3


def rank_colors(rates: Dict[int, float], n_colors: int) -> List[int]:
    """Colors by descending contention; unknown colors trail in id order."""
    ranked = sorted(rates, key=lambda c: (-rates[c], c))
    return ranked + [c for c in range(n_colors) if c not in rates]


@dataclass
class CapConfig:
    budget_pages: int = 64
    n_colors: int = 16
    demote_streak: int = DEMOTE_STREAK
    ranking: bool = True          # False: contention-blind color-id order


class PageCache:
    """FIFO page cache drawing pages from colored free lists in ranking
    order. Tracks allocation phases (consecutive runs of one color), cache
    hits/misses, and the recolor rule."""

    def __init__(self, free: ColoredFreeLists, config: CapConfig):
        self.free = free
        self.config = config
        self.ranking: List[int] = list(range(config.n_colors))
        self.cached: "OrderedDict[int, Tuple[int, Optional[int]]]" = OrderedDict()
        self.alloc_log: List[Tuple[int, Optional[int]]] = []  # (page, color)
        self.phase_colors: List[int] = []
        self.uncolored_allocs = 0
        self.hits = Counter()
        self.misses = Counter()
        self.recolors = 0
        self._hottest: Optional[int] = None
        self._demote = 0
        self.page_color: Dict[int, Optional[int]] = {}

    # -- ranking / recolor ----------------------------------------------------

    def update_ranking(self, rates: Dict[int, float]) -> None:
        if self.config.ranking:
            self.ranking = rank_colors(rates, self.config.n_colors)
        new_hot = self.ranking[0]
        if self._hottest is None:
            self._hottest = new_hot
        elif new_hot != self._hottest:
            self._demote += 1
            if self._demote >= self.config.demote_streak:
                self.reclaim_all()
                self._hottest = new_hot
                self._demote = 0
                self.recolors += 1
        else:
            self._demote = 0

    def reclaim_all(self) -> int:
        """Drop every cached page, returning pages to their free lists."""
        n = len(self.cached)
        for page, color in self.cached.values():
            self.free.add(page, color)
        self.cached.clear()
        return n

    # -- allocation ------------------------------------------------------------

    @property
    def alloc_color(self) -> Optional[int]:
        """Color the next allocation will try first (None = exhausted)."""
        for c in self.ranking:
            if self.free.lists[c]:
                return c
        return None

    def _alloc_page(self) -> Tuple[int, Optional[int]]:
        for c in self.ranking:
            page = self.free.take(c)
            if page is not None:
                if not self.phase_colors or self.phase_colors[-1] != c:
                    self.phase_colors.append(c)
                return page, c
        page = self.free.take_uncolored()
        if page is not None:
            self.uncolored_allocs += 1
            return page, None
        raise ValidationError("free lists exhausted and no uncolored pages")

    def access(self, actor: str, file_page: int) -> Tuple[int, bool]:
        """Look up a file page; on a miss allocate (recycling the oldest
        cached page once the budget is reached). Returns (guest page, hit)."""
        entry = self.cached.get(file_page)
        if entry is not None:
            self.hits[actor] += 1
            return entry[0], True
        self.misses[actor] += 1
        if len(self.cached) >= self.config.budget_pages:
            _, (page, color) = self.cached.popitem(last=False)
        else:
            page, color = self._alloc_page()
            self.alloc_log.append((page, color))
            self.page_color[page] = color
        self.cached[file_page] = (page, color)
        return page, False


# ---- scenario --------------------------------------------------------------------

@dataclass
class CapIntervalRow:
    interval: int
    actor: str
    hits: int
    misses: int
    alloc_color: int              # -1 when not an allocating actor


@dataclass
class CapResult:
    ranking: bool
    rows: List[CapIntervalRow]
    reuse_evictions: int
    scan_fill_violations: int     # scan LLC fills outside their page's zone
    scan_fills: int
    phases: List[int]             # allocation colors in phase order
    recolors: int
    hot_virtual_color: int
    reuse_virtual_color: int


def _cap_geometry() -> CacheGeometry:
    # l2_sets == llc_sets makes L2 and LLC colors coincide: 16 zones
    return CacheGeometry(l2_ways=4, l2_sets=1024, llc_ways=4, llc_sets=1024,
                         n_slices=2)


def run_cap_scenario(seed: int, ranking: bool = True, intervals: int = 20,
                     scan_pages_per_interval: int = 24,
                     budget_pages: int = 64,
                     stock_per_color: int = 80,
                     reuse_pages: int = 6,
                     hot_virtual_color: int = 5,
                     poisoner_moves_to: Optional[int] = None,
                     move_at_interval: int = 0,
                     geometry: Optional[CacheGeometry] = None) -> CapResult:
    """Streaming scan + hot reuse buffer + co-tenant poisoner.

    The reuse buffer lives in virtual color 0, skips line offset 0 (the
    monitored offset), and intentionally exceeds its L2 sets' capacity so
    its lines spill into the LLC where contention can reach them. The
    poisoner thrashes the zone behind `hot_virtual_color`; with ranking on,
    scan allocations follow it there. `poisoner_moves_to` switches the
    poisoner's zone mid-run to exercise the recolor rule.
    """
    g = geometry or _cap_geometry()
    topo = tenants.VTopology(vcpu_domain=[0, 0, 0])
    ctx = make_context(g, FragmentationProfile("fragmented", 1.0),
                       guest_pages=4096, seed=seed, topology=topo)
    scan_actor, reuse_actor = 1, 2

    filters = build_color_filters(ctx)
    n_colors = len(filters)
    if not 0 <= hot_virtual_color < n_colors or hot_virtual_color == 0:
        raise ValidationError("hot color must be a non-reuse virtual color")

    # colored free lists for the page cache
    free = ColoredFreeLists(n_colors)
    refill(ctx, free, filters,
           ctx.alloc_pages(stock_per_color * n_colors))

    # one monitored LLC set per virtual color
    classifier = {}
    def classify(page: int) -> int:
        c = classifier.get(page)
        if c is None:
            c = classify_page_parallel(ctx, page, filters)
            classifier[page] = c
        return c
    # like the filter build: a multinomial pool draw can leave some color
    # too thin, so grow the pool and rebuild until every color has a set
    pool = list(ctx.alloc_pages(pool_size(g, LLC, 2)))
    for _ in range(3):
        palette = build_parallel(ctx, LLC, f=1, offsets=[0],
                                 classify=classify, pool_pages=pool)
        msets = palette.all_sets()
        if {s.color for s in msets} == set(range(n_colors)):
            break
        pool += ctx.alloc_pages(pool_size(g, LLC, 2))
    else:
        raise ValidationError("monitor palette does not cover every color")

    # poisoner aims at the true zone behind the chosen virtual color
    true_hot = ctx.oracle_color(filters[hot_virtual_color].target, L2)
    zone_lines = (g.llc_sets // n_colors) * g.llc_ways * g.n_slices
    poisoner = tenants.TenantWorkload(
        kind="poisoner", actor=100, rate_per_ms=float(zone_lines),
        region_base_page=ctx.tmap.host_pages + 65536,
        region_pages=16 * max(1, (zone_lines // 64) * 2),
        colors=(true_hot,))
    register_tenant(ctx, poisoner.actor, domain=0)
    moved = False

    monitor = ContentionMonitor(
        ctx, msets,
        MonitorConfig(interval_ms=20.0, window_ms=1.0, f=1),
        workloads=[poisoner])

    cache_cfg = CapConfig(budget_pages=budget_pages, n_colors=n_colors,
                          ranking=ranking)
    pcache = PageCache(free, cache_cfg)

    # hot reuse buffer in virtual color 0, off the monitored offset
    buf_pages = []
    for _ in range(reuse_pages):
        p = free.take(0)
        if p is None:
            raise ValidationError("color 0 stock too small for reuse buffer")
        buf_pages.append(p)
    reuse_lines = [SimContext.addr(p, o << LINE_SHIFT)
                   for p in buf_pages for o in range(1, 64)]

    ctx.state.fill_trace_owners = {scan_actor}
    rows: List[CapIntervalRow] = []
    ev_mark: Optional[int] = None   # eviction counter after the warm pass
    violations = 0
    scan_fills = 0
    file_cursor = 0
    ev_key = reuse_actor

    for interval in range(intervals):
        if poisoner_moves_to is not None and interval == move_at_interval \
                and not moved:
            true_new = ctx.oracle_color(filters[poisoner_moves_to].target, L2)
            poisoner.colors = (true_new,)
            poisoner.rebind_zone()
            moved = True
        t0 = ctx.clock.now_ns
        monitor.monitor_cycle()
        pcache.update_ranking(monitor.rates_by_color())

        # scan: fresh file pages, streaming
        h0, m0 = pcache.hits["scan"], pcache.misses["scan"]
        trace_mark = len(ctx.state.fill_trace)
        for k in range(scan_pages_per_interval):
            page, hit = pcache.access("scan", file_cursor + k)
            if not hit:
                ctx.batch_access([SimContext.addr(page, o << LINE_SHIFT)
                                  for o in range(64)], actor=scan_actor)
        file_cursor += scan_pages_per_interval
        for _, line in ctx.state.fill_trace[trace_mark:]:
            scan_fills += 1
            want = pcache.page_color.get(_guest_page_of(ctx, line))
            if want is None:
                continue
            zone = color_of(g, LLC, line << LINE_SHIFT)
            if zone != ctx.oracle_color(filters[want].target, LLC):
                violations += 1
        alloc_c = pcache.phase_colors[-1] if pcache.phase_colors else -1
        rows.append(CapIntervalRow(interval, "scan",
                                   pcache.hits["scan"] - h0,
                                   pcache.misses["scan"] - m0, alloc_c))

        # reuse: re-touch the hot buffer; LLC-level losses of its lines are
        # charged continuously from the end of the warm pass, wherever they
        # happen in the interval (scan, poisoner, or the buffer's own churn)
        r_hits = r_miss = 0
        for line in reuse_lines:
            if ctx.touch(line, actor=reuse_actor) < 2:
                r_hits += 1
            else:
                r_miss += 1
        if ev_mark is None:     # first pass only warms the buffer
            ev_mark = ctx.state.llc_evictions_by_owner.get(ev_key, 0)
        rows.append(CapIntervalRow(interval, "reuse", r_hits, r_miss, -1))

        # idle out the interval; the poisoner keeps running
        tenants.step(ctx.state, ctx.clock, [poisoner],
                     t0 + int(monitor.config.interval_ms * 1_000_000))

    ctx.state.fill_trace_owners = None
    reuse_evictions = (ctx.state.llc_evictions_by_owner.get(ev_key, 0)
                       - (ev_mark or 0))
    return CapResult(ranking=ranking, rows=rows,
                     reuse_evictions=reuse_evictions,
                     scan_fill_violations=violations, scan_fills=scan_fills,
                     phases=list(pcache.phase_colors),
                     recolors=pcache.recolors,
                     hot_virtual_color=hot_virtual_color,
                     reuse_virtual_color=0)


def _guest_page_of(ctx: SimContext, hpa_line: int) -> Optional[int]:
    """Reverse-map a traced HPA line to the guest page backing it
    (translation is injective, so the reverse map is exact)."""
    hpa_page = hpa_line >> (12 - LINE_SHIFT)
    rev = getattr(ctx, "_rev_cache", None)
    if rev is None or getattr(ctx, "_rev_version", -2) != ctx.tmap.version:
        rev = {}
        gpa_to_hpa = ctx.tmap.gpa_to_hpa
        for gva_page, gpa_page in enumerate(ctx.tmap.gva_to_gpa):
            if 0 <= gpa_page < len(gpa_to_hpa):
                rev[gpa_to_hpa[gpa_page]] = gva_page
        ctx._rev_cache = rev
        ctx._rev_version = ctx.tmap.version
    return rev.get(hpa_page)
