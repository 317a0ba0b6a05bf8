"""Set-associative cache hierarchy: per-core private L2 plus a sliced LLC.

Addresses here are host-physical (HPA). Bits [5:0] are the line offset; the
L2 set index and the per-slice LLC set index both start at bit 6. Index bits
at or above bit 12 (the page-number bits) define a page's color at each
level: with Table-1-like geometry that is HPA bits [15:12] for the L2 (16
colors) and [16:12] for the LLC (32 colors).

Replacement: lru (default), plru (MRU-bit approximation, well defined for
the 11-way LLC), random (seeded).

Non-inclusive mode fills the L2 on a miss; the LLC is filled only by L2
eviction victims. Evicting an LLC line also drops private L2 copies in that
domain - the directory/snoop-filter analog of real non-inclusive parts;
without it a cross-core prober could never observe another core's
evictions. Inclusive mode fills both levels and back-invalidates on LLC
eviction.

Way masks are per-(actor, level) occupancy caps: a fill that would leave
the actor holding more lines in a set than its mask evicts the actor's own
oldest line first.
"""

import csv
from dataclasses import dataclass
from random import Random
from typing import Optional, TextIO

from .errors import ValidationError

# hit levels / cache levels
L2 = 0
LLC = 1
MEMORY = 2

LEVEL_NAMES = {L2: "l2", LLC: "llc", MEMORY: "memory"}

LINE_SHIFT = 6
PAGE_SHIFT = 12

_REPLACEMENT = ("lru", "plru", "random")


@dataclass(frozen=True)
class CacheGeometry:
    l2_ways: int = 16
    l2_sets: int = 1024
    llc_ways: int = 11
    llc_sets: int = 2048  # per slice
    n_slices: int = 20
    line_size: int = 64
    inclusive: bool = False
    replacement: str = "lru"

    def __post_init__(self):
        for name in ("l2_sets", "llc_sets"):
            v = getattr(self, name)
            if v < 1 or v & (v - 1):
                raise ValidationError(f"{name} must be a power of two, got {v}")
        for name in ("l2_ways", "llc_ways", "n_slices"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.line_size != 64:
            raise ValidationError("line_size is fixed at 64")
        if self.replacement not in _REPLACEMENT:
            raise ValidationError(f"replacement must be one of {_REPLACEMENT}")

    # colors = index bits at or above the page boundary (bit 12)
    @property
    def n_l2_colors(self) -> int:
        return max(1, self.l2_sets >> (PAGE_SHIFT - LINE_SHIFT))

    @property
    def n_llc_colors(self) -> int:
        return max(1, self.llc_sets >> (PAGE_SHIFT - LINE_SHIFT))

    def ways(self, level: int) -> int:
        return self.l2_ways if level == L2 else self.llc_ways

    def sets(self, level: int) -> int:
        return self.l2_sets if level == L2 else self.llc_sets

    def n_colors(self, level: int) -> int:
        return self.n_l2_colors if level == L2 else self.n_llc_colors


def set_index(geometry: CacheGeometry, level: int, hpa: int) -> int:
    return (hpa >> LINE_SHIFT) & (geometry.sets(level) - 1)


def slice_of(geometry: CacheGeometry, hpa: int) -> int:
    """Slice selection: XOR-fold HPA bits [35:6] to 12 bits, then a
    multiply-shift reduction modulo the slice count."""
    if geometry.n_slices == 1:
        return 0
    x = (hpa >> LINE_SHIFT) & 0x3FFFFFFF
    fold = (x ^ (x >> 12) ^ (x >> 24)) & 0xFFF
    h = (fold * 0x9E3779B1) & 0xFFFFFFFF
    return (h * geometry.n_slices) >> 32


def color_of(geometry: CacheGeometry, level: int, hpa: int) -> int:
    return (hpa >> PAGE_SHIFT) & (geometry.n_colors(level) - 1)


@dataclass
class EvictionRecord:
    level: int
    domain: int
    slice: int   # LLC slice index; core index for L2 records
    set_index: int
    tag: int     # line number (hpa >> 6)
    owner: int


@dataclass
class AccessResult:
    hit_level: int
    latency: Optional[float] = None
    evicted: Optional[EvictionRecord] = None


class CacheState:
    """Mutable cache contents for every core and LLC domain.

    Sets are insertion-ordered dicts keyed by line number. For lru/random
    the value is the owner actor id; for plru it is [owner, mru_bit].
    """

    def __init__(self, geometry: CacheGeometry, n_cores: int = 2,
                 core_domain: Optional[list] = None, seed: int = 0):
        self.geometry = geometry
        self.n_cores = n_cores
        self.core_domain = list(core_domain) if core_domain else [0] * n_cores
        if len(self.core_domain) != n_cores:
            raise ValidationError("core_domain length must equal n_cores")
        self.n_domains = max(self.core_domain) + 1
        g = geometry
        self.l2 = [[{} for _ in range(g.l2_sets)] for _ in range(n_cores)]
        self.llc = [[[{} for _ in range(g.llc_sets)] for _ in range(g.n_slices)]
                    for _ in range(self.n_domains)]
        self._l2_mask = g.l2_sets - 1
        self._llc_mask = g.llc_sets - 1
        self._pol = _REPLACEMENT.index(g.replacement)
        self._plru = self._pol == 1
        self._rng = Random(seed)
        self._actor_core = {}
        self._actor_dom = {}
        self._caps = {}  # (actor, level) -> way cap
        self._domain_cores = [[] for _ in range(self.n_domains)]
        for c, d in enumerate(self.core_domain):
            self._domain_cores[d].append(c)
        # counters, index 0 = L2, 1 = LLC
        self.fills = [0, 0]
        self.evictions = [0, 0]
        self.flushes = [0, 0]
        self.invalidations = 0  # L2 back-invalidations
        self.llc_evictions_by_owner = {}
        self.llc_evictions_by_owner_color = {}
        self.fill_trace_owners = None   # set of owners, or None
        self.fill_trace = []            # (owner, line) LLC fills when traced
        self.accesses = 0

    # ---- actors ----------------------------------------------------------

    def register_actor(self, actor: int, core: int, domain: Optional[int] = None):
        if core >= self.n_cores:
            raise ValidationError(f"core {core} out of range")
        self._actor_core[actor] = core
        dom = self.core_domain[core] if domain is None else domain
        self._actor_dom[actor] = dom

    def actor_core(self, actor: int) -> int:
        return self._actor_core[actor]

    def actor_domain(self, actor: int) -> int:
        return self._actor_dom[actor]

    def set_way_mask(self, actor: int, level: int, ways: int) -> None:
        limit = self.geometry.ways(level)
        if not 1 <= ways <= limit:
            raise ValidationError(f"way mask {ways} outside [1, {limit}]")
        if ways == limit:
            self._caps.pop((actor, level), None)
        else:
            self._caps[(actor, level)] = ways

    def clear_way_mask(self, actor: int, level: int) -> None:
        self._caps.pop((actor, level), None)

    # ---- victim selection ------------------------------------------------

    def _owner_of(self, value):
        return value[0] if self._plru else value

    def _victim(self, d: dict) -> int:
        pol = self._pol
        if pol == 0:
            return next(iter(d))
        if pol == 1:
            for k, v in d.items():
                if not v[1]:
                    return k
            for v in d.values():
                v[1] = 0
            return next(iter(d))
        return self._rng.choice(list(d))

    def _victim_owned(self, d: dict, actor: int) -> Optional[int]:
        plru = self._plru
        owned = [k for k, v in d.items()
                 if (v[0] if plru else v) == actor]
        if not owned:
            return None
        if self._pol == 2:
            return self._rng.choice(owned)
        if plru:
            for k in owned:
                if not d[k][1]:
                    return k
        return owned[0]

    def _owned_count(self, d: dict, actor: int) -> int:
        if self._plru:
            return sum(1 for v in d.values() if v[0] == actor)
        return sum(1 for v in d.values() if v == actor)

    def _touch(self, d: dict, line: int) -> None:
        """Recency update on hit."""
        if self._plru:
            v = d[line]
            v[1] = 1
            if all(u[1] for u in d.values()):
                for k, u in d.items():
                    if k != line:
                        u[1] = 0
        else:
            d[line] = d.pop(line)

    # ---- fills -----------------------------------------------------------

    def _fill_l2(self, core: int, dom: int, line: int, owner: int,
                 spill: bool) -> Optional[EvictionRecord]:
        """Insert a line into the owner's L2 set; returns the deepest
        eviction record this fill caused. spill=False drops victims
        (inclusive mode keeps its LLC copy already)."""
        d = self.l2[core][line & self._l2_mask]
        record = None
        cap = self._caps.get((owner, L2))
        ways = self.geometry.l2_ways
        while True:
            victim = None
            if cap is not None and self._owned_count(d, owner) >= cap:
                victim = self._victim_owned(d, owner)
            if victim is None and len(d) >= ways:
                victim = self._victim(d)
            if victim is None:
                break
            vowner = self._owner_of(d.pop(victim))
            self.evictions[L2] += 1
            rec = EvictionRecord(L2, dom, core, victim & self._l2_mask,
                                 victim, vowner)
            if record is None:
                record = rec
            if spill:
                deep = self._insert_llc(dom, victim, vowner)
                if deep is not None:
                    record = deep
            if cap is None or self._owned_count(d, owner) < cap:
                if len(d) < ways:
                    break
        d[line] = [owner, 1] if self._plru else owner
        self.fills[L2] += 1
        if self._plru and all(v[1] for v in d.values()):
            for k, v in d.items():
                if k != line:
                    v[1] = 0
        return record

    def _insert_llc(self, dom: int, line: int, owner: int
                    ) -> Optional[EvictionRecord]:
        """Insert (or refresh) a line in the domain's LLC."""
        g = self.geometry
        d = self.llc[dom][slice_of(g, line << LINE_SHIFT)][line & self._llc_mask]
        if line in d:
            self._touch(d, line)
            return None
        record = None
        cap = self._caps.get((owner, LLC))
        ways = g.llc_ways
        while True:
            victim = None
            if cap is not None and self._owned_count(d, owner) >= cap:
                victim = self._victim_owned(d, owner)
            if victim is None and len(d) >= ways:
                victim = self._victim(d)
            if victim is None:
                break
            record = self._evict_llc_line(d, dom, victim) or record
            if (cap is None or self._owned_count(d, owner) < cap) and len(d) < ways:
                break
        d[line] = [owner, 1] if self._plru else owner
        self.fills[LLC] += 1
        if self.fill_trace_owners is not None and owner in self.fill_trace_owners:
            self.fill_trace.append((owner, line))
        if self._plru and all(v[1] for v in d.values()):
            for k, v in d.items():
                if k != line:
                    v[1] = 0
        return record

    def _evict_llc_line(self, d: dict, dom: int, victim: int) -> EvictionRecord:
        vowner = self._owner_of(d.pop(victim))
        self.evictions[LLC] += 1
        self.llc_evictions_by_owner[vowner] = \
            self.llc_evictions_by_owner.get(vowner, 0) + 1
        color = (victim >> (PAGE_SHIFT - LINE_SHIFT)) & (self.geometry.n_l2_colors - 1)
        key = (vowner, color)
        self.llc_evictions_by_owner_color[key] = \
            self.llc_evictions_by_owner_color.get(key, 0) + 1
        # directory analog: dropping the LLC line drops private copies too
        mask = self._l2_mask
        for core in self._domain_cores[dom]:
            s2 = self.l2[core][victim & mask]
            if victim in s2:
                del s2[victim]
                self.invalidations += 1
        return EvictionRecord(LLC, dom, slice_of(self.geometry, victim << LINE_SHIFT),
                              victim & self._llc_mask, victim, vowner)

    # ---- public access paths ----------------------------------------------

    def access_level(self, actor: int, hpa: int) -> int:
        """Fast path: perform the access, return only the hit level."""
        self.accesses += 1
        line = hpa >> LINE_SHIFT
        core = self._actor_core[actor]
        d2 = self.l2[core][line & self._l2_mask]
        if line in d2:
            self._touch(d2, line)
            return L2
        dom = self._actor_dom[actor]
        g = self.geometry
        d3 = self.llc[dom][slice_of(g, hpa)][line & self._llc_mask]
        if line in d3:
            self._touch(d3, line)
            self._fill_l2(core, dom, line, actor, spill=not g.inclusive)
            return LLC
        if g.inclusive:
            self._insert_llc(dom, line, actor)
            self._fill_l2(core, dom, line, actor, spill=False)
        else:
            self._fill_l2(core, dom, line, actor, spill=True)
        return MEMORY

    def access(self, actor: int, hpa: int) -> AccessResult:
        """Full access path, reporting the deepest eviction it caused."""
        self.accesses += 1
        line = hpa >> LINE_SHIFT
        core = self._actor_core[actor]
        dom = self._actor_dom[actor]
        g = self.geometry
        d2 = self.l2[core][line & self._l2_mask]
        if line in d2:
            self._touch(d2, line)
            return AccessResult(L2)
        d3 = self.llc[dom][slice_of(g, hpa)][line & self._llc_mask]
        if line in d3:
            self._touch(d3, line)
            rec = self._fill_l2(core, dom, line, actor, spill=not g.inclusive)
            return AccessResult(LLC, evicted=rec)
        if g.inclusive:
            rec = self._insert_llc(dom, line, actor)
            rec = self._fill_l2(core, dom, line, actor, spill=False) or rec
        else:
            rec = self._fill_l2(core, dom, line, actor, spill=True)
        return AccessResult(MEMORY, evicted=rec)

    def llc_install(self, dom: int, hpa: int, owner: int) -> None:
        """Direct LLC install (shared-read pull by a helper vCPU)."""
        self.accesses += 1
        self._insert_llc(dom, hpa >> LINE_SHIFT, owner)

    def flush_line(self, hpa: int) -> None:
        """Drop a line from every cache in the system."""
        line = hpa >> LINE_SHIFT
        s2 = line & self._l2_mask
        for core in range(self.n_cores):
            d = self.l2[core][s2]
            if line in d:
                del d[line]
                self.flushes[L2] += 1
        sl = slice_of(self.geometry, hpa)
        s3 = line & self._llc_mask
        for dom in range(self.n_domains):
            d = self.llc[dom][sl][s3]
            if line in d:
                del d[line]
                self.flushes[LLC] += 1

    # ---- oracle-side inspection (no state mutation) ------------------------

    def peek_level(self, actor: int, hpa: int) -> int:
        line = hpa >> LINE_SHIFT
        core = self._actor_core[actor]
        if line in self.l2[core][line & self._l2_mask]:
            return L2
        dom = self._actor_dom[actor]
        d3 = self.llc[dom][slice_of(self.geometry, hpa)][line & self._llc_mask]
        return LLC if line in d3 else MEMORY

    def occupancy(self, level: int) -> int:
        if level == L2:
            return sum(len(d) for core in self.l2 for d in core)
        return sum(len(d) for dom in self.llc for sl in dom for d in sl)

    def check_conservation(self) -> None:
        from .errors import InvariantError
        l2_expect = self.fills[L2] - self.evictions[L2] - self.flushes[L2] \
            - self.invalidations
        llc_expect = self.fills[LLC] - self.evictions[LLC] - self.flushes[LLC]
        if self.occupancy(L2) != l2_expect:
            raise InvariantError("L2 line conservation violated")
        if self.occupancy(LLC) != llc_expect:
            raise InvariantError("LLC line conservation violated")

    # ---- serialization ------------------------------------------------------

    def dump_csv(self, fh: TextIO) -> None:
        """State dump, one row per resident line: level,slice,set,way,tag,owner.

        For L2 rows the slice column carries the core index; for LLC rows it
        carries domain * n_slices + slice.
        """
        w = csv.writer(fh)
        w.writerow(["level", "slice", "set", "way", "tag", "owner"])
        for core in range(self.n_cores):
            for si, d in enumerate(self.l2[core]):
                for way, (line, v) in enumerate(d.items()):
                    w.writerow(["l2", core, si, way, line, self._owner_of(v)])
        for dom in range(self.n_domains):
            for sl in range(self.geometry.n_slices):
                gslice = dom * self.geometry.n_slices + sl
                for si, d in enumerate(self.llc[dom][sl]):
                    for way, (line, v) in enumerate(d.items()):
                        w.writerow(["llc", gslice, si, way, line,
                                    self._owner_of(v)])


# ---- geometry config file (key=value lines) ---------------------------------

_GEOMETRY_KEYS = ("l2_ways", "l2_sets", "llc_ways", "llc_sets", "n_slices",
                  "line_size", "inclusive", "replacement")

# a geometry is meaningless without its dimensions; the rest may default
_GEOMETRY_REQUIRED = ("l2_ways", "l2_sets", "llc_ways", "llc_sets", "n_slices")


def geometry_from_mapping(values: dict, require_dims: bool = False) -> CacheGeometry:
    if require_dims:
        for key in _GEOMETRY_REQUIRED:
            if key not in values:
                raise ValidationError(f"missing geometry key: {key}")
    kwargs = {}
    for key, raw in values.items():
        if key not in _GEOMETRY_KEYS:
            raise ValidationError(f"unknown geometry key: {key}")
        if key == "replacement":
            kwargs[key] = str(raw)
        elif key == "inclusive":
            if isinstance(raw, bool):
                kwargs[key] = raw
            elif str(raw).lower() in ("1", "true", "yes"):
                kwargs[key] = True
            elif str(raw).lower() in ("0", "false", "no"):
                kwargs[key] = False
            else:
                raise ValidationError(f"bad boolean for inclusive: {raw!r}")
        else:
            try:
                kwargs[key] = int(raw)
            except (TypeError, ValueError):
                raise ValidationError(f"geometry key {key} must be an int")
    return CacheGeometry(**kwargs)


def load_geometry(path) -> CacheGeometry:
    values = {}
    with open(path) as fh:
        for ln, rawline in enumerate(fh, 1):
            text = rawline.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValidationError(f"{path}:{ln}: expected key=value")
            key, _, val = text.partition("=")
            values[key.strip()] = val.strip()
    return geometry_from_mapping(values, require_dims=True)


def save_geometry(geometry: CacheGeometry, path) -> None:
    with open(path, "w") as fh:
        for key in _GEOMETRY_KEYS:
            value = getattr(geometry, key)
            if key == "inclusive":
                value = int(value)
            fh.write(f"{key}={value}\n")
