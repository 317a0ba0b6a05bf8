"""Virtual page coloring.

A VM cannot see host physical colors, but a full palette of minimal L2
eviction sets — one per color, built at one page offset — lets it label any
page by which set evicts a line of that page. The labels ("virtual colors")
are a fixed permutation of the true colors.
"""

from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from . import cache
from .cache import L2, LINE_SHIFT
from .context import SimContext
from .errors import ClassificationAmbiguous, PartialPaletteError, ValidationError
from .evset import EvictionSet, build_all_at_offset, pool_size, test_eviction

BASE_OFFSET = 0


def build_color_filters(ctx: SimContext,
                        pool_pages: Optional[Sequence[int]] = None,
                        safety: int = 3, retries: int = 2) -> List[EvictionSet]:
    """Build the complete palette of color filters: one minimal L2 eviction
    set per color, all at one page offset, labeled 0..n-1 in build order.
    An auto-allocated pool that draws too few pages of some color grows and
    rebuilds, up to `retries` times; a caller-supplied pool never grows.
    Raises PartialPaletteError when the pool stops short of a full palette."""
    g = ctx.geometry
    expected = g.n_l2_colors
    own_pool = pool_pages is None
    pages = (ctx.alloc_pages(pool_size(g, L2, safety)) if own_pool
             else list(pool_pages))
    while True:
        pool = [SimContext.addr(p, BASE_OFFSET) for p in pages]
        report = build_all_at_offset(ctx, L2, BASE_OFFSET, pool,
                                     max_sets=expected)
        if len(report.sets) == expected:
            break
        if not own_pool or retries <= 0:
            raise PartialPaletteError(len(report.sets), expected)
        retries -= 1
        pages += ctx.alloc_pages(pool_size(g, L2, safety))
    for label, s in enumerate(report.sets):
        s.color = label
    return report.sets


def _identity_color(page: int, filters: Sequence[EvictionSet]) -> Optional[int]:
    """Color of a page that is literally part of a filter (its target or a
    member page). Such a page is congruent with that filter by construction,
    and probing it would self-refresh: the staged line is also one of the
    accessed members, so the displacement test can never fire."""
    for f in filters:
        if f.target >> cache.PAGE_SHIFT == page or \
                any(m >> cache.PAGE_SHIFT == page for m in f.members):
            return f.color
    return None


def classify_page_sequential(ctx: SimContext, page: int,
                             filters: Sequence[EvictionSet]) -> int:
    """Test the page against each filter in turn at the filter's own offset.
    Exactly one filter must evict the page's line."""
    own = _identity_color(page, filters)
    if own is not None:
        return own
    matches = [f.color for f in filters
               if test_eviction(ctx, SimContext.addr(page, f.offset),
                                f.members, L2)]
    if len(matches) != 1:
        raise ClassificationAmbiguous(
            f"page {page:#x} matched filters {matches}")
    return matches[0]


def classify_page_parallel(ctx: SimContext, page: int,
                           filters: Sequence[EvictionSet],
                           retries: int = 2) -> int:
    """Classify with one probe pass: shift filter i to line offset i, stage
    the page's line at every offset, batch all shifted filters, and read
    which single line was displaced. Colors never collide across offsets
    (distinct sets), so one round covers the whole palette. Falls back to
    the sequential probe when the round is not clean."""
    if len(filters) > 64:
        raise ValidationError("parallel classify supports at most 64 filters")
    own = _identity_color(page, filters)
    if own is not None:
        return own
    shifted = [f.shifted(i << LINE_SHIFT) for i, f in enumerate(filters)]
    for _ in range(retries):
        ctx.warm()
        probes = [SimContext.addr(page, i << LINE_SHIFT)
                  for i in range(len(shifted))]
        # cold start, as in test_eviction: resident lines would refresh
        # instead of insert and starve the displacement signal
        for f in shifted:
            for m in f.members:
                ctx.state.flush_line(ctx.resolve(m))
        for p in probes:
            ctx.state.flush_line(ctx.resolve(p))
            ctx.touch(p)
        for f in shifted:
            ctx.batch_access(f.members)
        evicted = [i for i, p in enumerate(probes) if ctx.measure(p) > L2]
        if len(evicted) == 1:
            return shifted[evicted[0]].color
    return classify_page_sequential(ctx, page, filters)


@dataclass
class ColoredFreeLists:
    """Free pages bucketed by virtual color, plus an uncolored overflow."""
    n_colors: int
    lists: Dict[int, deque] = field(default_factory=dict)
    uncolored: deque = field(default_factory=deque)

    def __post_init__(self):
        for c in range(self.n_colors):
            self.lists.setdefault(c, deque())

    def add(self, page: int, color: Optional[int]) -> None:
        if color is None:
            self.uncolored.append(page)
        elif 0 <= color < self.n_colors:
            self.lists[color].append(page)
        else:
            raise ValidationError(f"color {color} out of range")

    def take(self, color: int) -> Optional[int]:
        q = self.lists[color]
        return q.popleft() if q else None

    def take_uncolored(self) -> Optional[int]:
        return self.uncolored.popleft() if self.uncolored else None

    @property
    def histogram(self) -> Dict[int, int]:
        return {c: len(self.lists[c]) for c in range(self.n_colors)}

    @property
    def total(self) -> int:
        return sum(len(q) for q in self.lists.values()) + len(self.uncolored)


def refill(ctx: SimContext, free: ColoredFreeLists,
           filters: Sequence[EvictionSet], pages: Sequence[int],
           parallel: bool = True) -> Dict[int, int]:
    """Classify pages into the colored free lists; returns the histogram of
    colors seen in this batch."""
    seen: Counter = Counter()
    for p in pages:
        if parallel:
            c = classify_page_parallel(ctx, p, filters)
        else:
            c = classify_page_sequential(ctx, p, filters)
        free.add(p, c)
        seen[c] += 1
    return dict(sorted(seen.items()))


def gpa_color_overlap(tmap, geometry: cache.CacheGeometry,
                      level: int = L2,
                      pages: Optional[Sequence[int]] = None) -> float:
    """How well guest-physical colors predict host-physical colors: for each
    GPA color group, the modal HPA color's share, averaged over pages.
    1.0 means guest coloring is exact; 1/n_colors is uninformative."""
    n = geometry.n_colors(level)
    groups: Dict[int, Counter] = {}
    items = pages if pages is not None else range(len(tmap.gpa_to_hpa))
    count = 0
    for gpa_page in items:
        if not 0 <= gpa_page < len(tmap.gpa_to_hpa):
            continue
        hpa_page = tmap.gpa_to_hpa[gpa_page]
        groups.setdefault(gpa_page & (n - 1), Counter())[hpa_page & (n - 1)] += 1
        count += 1
    if not count:
        raise ValidationError("no mapped pages to score")
    return sum(max(c.values()) for c in groups.values()) / count
