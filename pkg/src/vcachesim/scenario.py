"""Scenario files: declarative TOML descriptions of a full simulator run.

A scenario pins everything a run needs - cache geometry, guest translation
profile, co-tenant workloads, monitor settings, policy selection, duration,
and seed - so the same file always reproduces the same outputs. Experiment
names select which driver in `experiments` consumes the scenario.

Schema (TOML):

    name = "window_sweep"          # required
    seed = 7                       # required
    experiment = "window_sweep"    # required, one of EXPERIMENT_NAMES
    duration_ms = 200.0            # > 0
    policy = "none"                # none | cas | cap | cas+cap

    geometry = "desk"              # builtin name, or a .cfg path, or:
    # [geometry]                   # inline table (dimensions required)
    # l2_ways = 4 ...

    [translation]
    profile = "fragmented"         # contiguous | fragmented
    shuffle = 1.0
    guest_pages = 2048

    [monitor]                      # optional; omitted -> driver default
    interval_ms = 10.0
    window_ms = 7.0
    f = 4
    alpha = 0.3

    [[tenants]]                    # zero or more
    kind = "polluter"
    rate_per_ms = 500.0
    region_pages = 256
    domain = 0

    [params]                       # free-form experiment knobs
    runs = 400
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .cache import CacheGeometry, geometry_from_mapping, load_geometry
from .errors import ValidationError
from .mem import FragmentationProfile
from .tenants import TenantWorkload
from .vscan import MonitorConfig

POLICIES = ("none", "cas", "cap", "cas+cap")

# names the run driver knows how to execute (kept in lockstep with
# experiments.EXPERIMENTS; a test pins the two together)
EXPERIMENT_NAMES = frozenset({
    "coverage",
    "evset_build",
    "assoc_probe",
    "manual_flush",
    "window_sweep",
    "adaptive_window",
    "quiescent",
    "color_ident",
    "remap_skew",
    "cas_steering",
    "cap_absorb",
    "cap_confine",
    "monitor",
})

BUILTIN_GEOMETRIES = {
    # full-size part (the published table); expensive, used by acceptance
    "table1": CacheGeometry(l2_ways=16, l2_sets=1024,
                            llc_ways=11, llc_sets=2048, n_slices=20),
    # desk-scale default: same shape, minutes -> seconds
    "desk": CacheGeometry(l2_ways=4, l2_sets=64,
                          llc_ways=4, llc_sets=128, n_slices=4),
}

_TOP_KEYS = {"name", "seed", "experiment", "duration_ms", "policy",
             "geometry", "translation", "monitor", "tenants", "params"}

_TENANT_KEYS = {"kind", "rate_per_ms", "region_pages", "region_base_page",
                "domain", "colors", "start_ms", "stop_ms", "pausable"}


@dataclass
class TenantSpec:
    """Workload declaration; becomes a TenantWorkload once a context exists
    and host region addresses can be assigned."""
    kind: str
    rate_per_ms: float = 0.0
    region_pages: int = 256
    region_base_page: Optional[int] = None  # None -> auto above guest RAM
    domain: int = 0
    colors: tuple = ()
    start_ms: float = 0.0
    stop_ms: float = math.inf
    pausable: bool = False


@dataclass
class Scenario:
    name: str
    seed: int
    experiment: str
    geometry: CacheGeometry
    profile: FragmentationProfile
    guest_pages: int = 2048
    duration_ms: float = 100.0
    policy: str = "none"
    monitor: Optional[MonitorConfig] = None
    tenants: List[TenantSpec] = field(default_factory=list)
    params: dict = field(default_factory=dict)
    source: str = "<memory>"


def _require(data: dict, key: str, source: str):
    if key not in data:
        raise ValidationError(f"{source}: missing required key: {key}")
    return data[key]


def _resolve_geometry(ref, source: str) -> CacheGeometry:
    if isinstance(ref, dict):
        return geometry_from_mapping(ref, require_dims=True)
    if isinstance(ref, str):
        if ref in BUILTIN_GEOMETRIES:
            return BUILTIN_GEOMETRIES[ref]
        if ref.endswith(".cfg"):
            return load_geometry(ref)
        raise ValidationError(
            f"{source}: unknown geometry {ref!r} (builtin names: "
            f"{sorted(BUILTIN_GEOMETRIES)}, or a path to a .cfg file)")
    raise ValidationError(f"{source}: geometry must be a name, path, or table")


def _parse_monitor(table: dict, source: str) -> MonitorConfig:
    allowed = {"interval_ms", "window_ms", "min_window_ms", "shrink_ms",
               "f", "alpha", "adaptive"}
    bad = set(table) - allowed
    if bad:
        raise ValidationError(f"{source}: unknown monitor key: {sorted(bad)[0]}")
    return MonitorConfig(**table)


def _parse_tenant(table: dict, index: int, source: str) -> TenantSpec:
    bad = set(table) - _TENANT_KEYS
    if bad:
        raise ValidationError(
            f"{source}: tenants[{index}]: unknown key: {sorted(bad)[0]}")
    kind = _require(table, "kind", f"{source}: tenants[{index}]")
    spec = TenantSpec(
        kind=str(kind),
        rate_per_ms=float(table.get("rate_per_ms", 0.0)),
        region_pages=int(table.get("region_pages", 256)),
        region_base_page=(int(table["region_base_page"])
                          if "region_base_page" in table else None),
        domain=int(table.get("domain", 0)),
        colors=tuple(table.get("colors", ())),
        start_ms=float(table.get("start_ms", 0.0)),
        stop_ms=float(table.get("stop_ms", math.inf)),
        pausable=bool(table.get("pausable", False)),
    )
    # surface kind/rate/colors errors at load time, not mid-run
    try:
        TenantWorkload(kind=spec.kind, actor=0, rate_per_ms=spec.rate_per_ms,
                       colors=spec.colors)
    except ValidationError as e:
        raise ValidationError(f"{source}: tenants[{index}]: {e}") from e
    return spec


def scenario_from_mapping(data: dict, source: str = "<memory>",
                          geometry_override: Optional[CacheGeometry] = None,
                          seed_override: Optional[int] = None) -> Scenario:
    if not isinstance(data, dict):
        raise ValidationError(f"{source}: top level must be a table")
    bad = set(data) - _TOP_KEYS
    if bad:
        raise ValidationError(f"{source}: unknown key: {sorted(bad)[0]}")

    name = str(_require(data, "name", source))
    seed = _require(data, "seed", source)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValidationError(f"{source}: seed must be an integer")
    if seed_override is not None:
        seed = seed_override

    experiment = str(_require(data, "experiment", source))
    if experiment not in EXPERIMENT_NAMES:
        raise ValidationError(
            f"{source}: unknown experiment {experiment!r} "
            f"(known: {sorted(EXPERIMENT_NAMES)})")

    policy = str(data.get("policy", "none"))
    if policy not in POLICIES:
        raise ValidationError(
            f"{source}: unknown policy {policy!r} (one of {POLICIES})")

    duration_ms = float(data.get("duration_ms", 100.0))
    if not duration_ms > 0:
        raise ValidationError(f"{source}: duration_ms must be > 0")

    if geometry_override is not None:
        geometry = geometry_override
    else:
        geometry = _resolve_geometry(data.get("geometry", "desk"), source)

    trans = data.get("translation", {})
    if not isinstance(trans, dict):
        raise ValidationError(f"{source}: translation must be a table")
    bad = set(trans) - {"profile", "shuffle", "guest_pages", "host_colors"}
    if bad:
        raise ValidationError(
            f"{source}: translation: unknown key: {sorted(bad)[0]}")
    profile = FragmentationProfile(
        kind=str(trans.get("profile", "fragmented")),
        shuffle_degree=float(trans.get("shuffle", 1.0)),
        host_colors=(tuple(trans["host_colors"])
                     if "host_colors" in trans else None),
    )
    guest_pages = int(trans.get("guest_pages", 2048))
    if guest_pages < 1:
        raise ValidationError(f"{source}: guest_pages must be >= 1")

    monitor = None
    if "monitor" in data:
        if not isinstance(data["monitor"], dict):
            raise ValidationError(f"{source}: monitor must be a table")
        monitor = _parse_monitor(data["monitor"], source)

    tenants = []
    raw_tenants = data.get("tenants", [])
    if not isinstance(raw_tenants, list):
        raise ValidationError(f"{source}: tenants must be an array of tables")
    for i, t in enumerate(raw_tenants):
        if not isinstance(t, dict):
            raise ValidationError(f"{source}: tenants[{i}] must be a table")
        tenants.append(_parse_tenant(t, i, source))

    params = data.get("params", {})
    if not isinstance(params, dict):
        raise ValidationError(f"{source}: params must be a table")

    return Scenario(name=name, seed=seed, experiment=experiment,
                    geometry=geometry, profile=profile,
                    guest_pages=guest_pages, duration_ms=duration_ms,
                    policy=policy, monitor=monitor, tenants=tenants,
                    params=dict(params), source=source)


def load_scenario(path, geometry_override: Optional[CacheGeometry] = None,
                  seed_override: Optional[int] = None) -> Scenario:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:  # message carries line/column
        raise ValidationError(f"{path}: {e}") from e
    except OSError as e:
        raise ValidationError(f"{path}: {e}") from e
    return scenario_from_mapping(data, source=str(path),
                                 geometry_override=geometry_override,
                                 seed_override=seed_override)


def build_workloads(scenario: Scenario, host_pages: int,
                    first_actor: int = 100) -> List[TenantWorkload]:
    """Materialize tenant specs: actor ids from first_actor upward, regions
    auto-placed in disjoint host ranges above the guest's RAM image."""
    out = []
    cursor = host_pages + 65536
    for i, spec in enumerate(scenario.tenants):
        if spec.region_base_page is not None:
            base = spec.region_base_page
        else:
            base = cursor
            cursor += max(spec.region_pages, 16) + 64
        out.append(TenantWorkload(
            kind=spec.kind, actor=first_actor + i,
            rate_per_ms=spec.rate_per_ms, region_base_page=base,
            region_pages=spec.region_pages, colors=spec.colors,
            start_ms=spec.start_ms, stop_ms=spec.stop_ms,
            pausable=spec.pausable))
    return out
