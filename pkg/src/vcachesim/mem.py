"""Two-layer page translation (GVA -> GPA -> HPA) with remap events.

Pages are 4 KiB; translation preserves address bits [11:0]. The GVA->GPA
layer is identity at build time (one guest, linear layout); fragmentation
and churn live in the GPA->HPA layer. The host page pool is at least 4x the
guest size, so remaps always find fresh backings.

oracle_color is the hypercall analog: ground-truth page color straight from
the HPA bits, bypassing every measurement path.
"""

import math
from dataclasses import dataclass
from random import Random
from typing import Optional, Sequence, TextIO

from . import cache
from .errors import TranslationFault, ValidationError

PAGE_SHIFT = 12
PAGE_SIZE = 1 << PAGE_SHIFT

HOST_FACTOR = 4
# contiguous backings start here; multiple of 32 pages so GPA-color ==
# HPA-color at both levels under Table-1-like geometry
_CONTIG_BASE = 32


@dataclass(frozen=True)
class FragmentationProfile:
    kind: str = "contiguous"        # "contiguous" | "fragmented"
    shuffle_degree: float = 1.0     # fraction of pages scattered when fragmented
    host_colors: Optional[tuple] = None  # restrict host pages to these L2 colors

    def __post_init__(self):
        if self.kind not in ("contiguous", "fragmented"):
            raise ValidationError(f"unknown profile kind: {self.kind}")
        if not 0.0 <= self.shuffle_degree <= 1.0:
            raise ValidationError("shuffle_degree must be in [0, 1]")


@dataclass(frozen=True)
class RemapEvent:
    at_ms: float
    fraction: float
    color_bias: Optional[tuple] = None  # weights over 16 L2 colors

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValidationError("remap fraction must be in (0, 1]")


class TranslationMap:
    """Injective per-page maps for both layers. apply_remap returns a new
    map; existing maps are never mutated, so concurrent readers of an old
    version stay consistent."""

    def __init__(self, gva_to_gpa: list, gpa_to_hpa: list, host_pages: int,
                 version: int = 0):
        self.gva_to_gpa = gva_to_gpa
        self.gpa_to_hpa = gpa_to_hpa
        self.host_pages = host_pages
        self.version = version
        self.guest_pages = len(gva_to_gpa)

    # ---- walks ------------------------------------------------------------

    def gva_page_to_hpa_page(self, page: int) -> int:
        try:
            return self.gpa_to_hpa[self.gva_to_gpa[page]]
        except IndexError:
            raise TranslationFault(f"gva page {page:#x} unmapped") from None

    def translate(self, addr: int, frm: str = "gva", to: str = "hpa") -> int:
        page = addr >> PAGE_SHIFT
        offset = addr & (PAGE_SIZE - 1)
        if frm == "gva":
            if not 0 <= page < self.guest_pages:
                raise TranslationFault(f"gva page {page:#x} unmapped")
            page = self.gva_to_gpa[page]
            if to == "gpa":
                return (page << PAGE_SHIFT) | offset
        elif frm != "gpa":
            raise ValidationError(f"cannot translate from {frm!r}")
        if not 0 <= page < len(self.gpa_to_hpa):
            raise TranslationFault(f"gpa page {page:#x} unmapped")
        if to != "hpa":
            raise ValidationError(f"cannot translate {frm!r} to {to!r}")
        return (self.gpa_to_hpa[page] << PAGE_SHIFT) | offset

    # ---- serialization ------------------------------------------------------

    def dump(self, fh: TextIO) -> None:
        """One line per page: 'gpa_page hpa_page'."""
        for gpa, hpa in enumerate(self.gpa_to_hpa):
            fh.write(f"{gpa} {hpa}\n")

    def check_injective(self) -> None:
        from .errors import InvariantError
        if len(set(self.gpa_to_hpa)) != len(self.gpa_to_hpa):
            raise InvariantError("gpa->hpa map not injective")
        if len(set(self.gva_to_gpa)) != len(self.gva_to_gpa):
            raise InvariantError("gva->gpa map not injective")


def _host_pool(host_pages: int, profile: FragmentationProfile) -> list:
    if profile.host_colors is None:
        return list(range(host_pages))
    allowed = set(profile.host_colors)
    pool = [p for p in range(host_pages) if (p & 0xF) in allowed]
    return pool


def build_translation(guest_pages: int, profile: FragmentationProfile,
                      rng: Random, host_pages: Optional[int] = None
                      ) -> TranslationMap:
    if guest_pages < 1:
        raise ValidationError("guest_pages must be >= 1")
    if host_pages is None:
        host_pages = HOST_FACTOR * guest_pages + _CONTIG_BASE
    if host_pages < HOST_FACTOR * guest_pages:
        raise ValidationError("host space must be at least 4x guest space")
    gva_to_gpa = list(range(guest_pages))
    if profile.kind == "contiguous" and profile.host_colors is None:
        gpa_to_hpa = [p + _CONTIG_BASE for p in range(guest_pages)]
        return TranslationMap(gva_to_gpa, gpa_to_hpa, host_pages)

    pool = _host_pool(host_pages, profile)
    if len(pool) < guest_pages:
        raise ValidationError("host color restriction leaves too few pages")
    if profile.kind == "contiguous":
        gpa_to_hpa = pool[:guest_pages]
        return TranslationMap(gva_to_gpa, gpa_to_hpa, host_pages)

    n_scattered = round(profile.shuffle_degree * guest_pages)
    scattered = set(rng.sample(range(guest_pages), n_scattered))
    gpa_to_hpa = [-1] * guest_pages
    used = set()
    pool_set = set(pool)
    for gpa in range(guest_pages):
        if gpa in scattered:
            continue
        want = gpa + _CONTIG_BASE
        if want in pool_set and want not in used:
            gpa_to_hpa[gpa] = want
            used.add(want)
        else:
            scattered.add(gpa)
    free = [p for p in pool if p not in used]
    rng.shuffle(free)
    for gpa in sorted(scattered):
        gpa_to_hpa[gpa] = free.pop()
        used.add(gpa_to_hpa[gpa])
    return TranslationMap(gva_to_gpa, gpa_to_hpa, host_pages)


def apply_remap(tmap: TranslationMap, event: RemapEvent, rng: Random,
                host_colors: Optional[Sequence[int]] = None) -> TranslationMap:
    """Rebacks ceil(fraction * mapped pages) GPA pages onto fresh host pages.

    Returns a new map (version + 1); the input map is unchanged. color_bias
    skews new backings toward the given 16-entry L2-color weight vector,
    best effort when a color's free pages run out.
    """
    n = len(tmap.gpa_to_hpa)
    k = math.ceil(event.fraction * n)
    victims = sorted(rng.sample(range(n), k))
    used = set(tmap.gpa_to_hpa)
    if host_colors is None:
        free = [p for p in range(tmap.host_pages) if p not in used]
    else:
        allowed = set(host_colors)
        free = [p for p in range(tmap.host_pages)
                if p not in used and (p & 0xF) in allowed]
    if len(free) < k:
        raise ValidationError("not enough free host pages for remap")
    new_map = list(tmap.gpa_to_hpa)
    if event.color_bias is None:
        rng.shuffle(free)
        for gpa in victims:
            new_map[gpa] = free.pop()
    else:
        weights = list(event.color_bias)
        if len(weights) != 16 or any(w < 0 for w in weights) or sum(weights) <= 0:
            raise ValidationError("color_bias must be 16 non-negative weights")
        by_color = {c: [] for c in range(16)}
        for p in free:
            by_color[p & 0xF].append(p)
        for lst in by_color.values():
            rng.shuffle(lst)
        fallback = sorted(by_color, key=lambda c: -len(by_color[c]))
        for gpa in victims:
            color = rng.choices(range(16), weights=weights)[0]
            if not by_color[color]:
                color = next(c for c in fallback if by_color[c])
            new_map[gpa] = by_color[color].pop()
    return TranslationMap(tmap.gva_to_gpa, new_map, tmap.host_pages,
                          tmap.version + 1)


def oracle_color(tmap: TranslationMap, gva: int, level: int,
                 geometry: cache.CacheGeometry) -> int:
    """Ground-truth color of a guest address at the given cache level,
    straight from its HPA bits (the hypercall analog)."""
    return cache.color_of(geometry, level, tmap.translate(gva))


def gpa_color(tmap: TranslationMap, gva: int, geometry: cache.CacheGeometry,
              level: int = cache.L2) -> int:
    """Color the guest OS believes a page has, from its GPA bits."""
    return cache.color_of(geometry, level, tmap.translate(gva, to="gpa"))
