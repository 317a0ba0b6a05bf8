"""Named experiment drivers.

Each driver consumes a Scenario, writes CSV outputs into a directory, and
returns a JSON-ready summary dict. Everything written is a pure function of
the scenario (geometry, profile, parameters, seed): no wall-clock time or
environment detail leaks into the outputs, so a seed always reproduces a
bit-identical bundle.
"""

import csv
import dataclasses
import json
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional

from . import evset
from .cache import L2, LLC, LEVEL_NAMES, LINE_SHIFT, CacheGeometry
from .cap import run_cap_scenario
from .cas import run_steering_scenario
from .context import SimContext, make_context, register_tenant
from .errors import PruneError, ValidationError
from .evset import (build_all_at_offset, build_parallel, coverage_theoretical,
                    detect_duplicates, probe_associativity)
from .mem import FragmentationProfile, RemapEvent, apply_remap, build_translation
from .rng import child_rng, child_seed
from .scenario import Scenario, build_workloads
from .tenants import TenantWorkload
from .vcol import (ColoredFreeLists, build_color_filters,
                   classify_page_parallel, classify_page_sequential,
                   gpa_color_overlap)
from .vscan import ContentionMonitor, MonitorConfig

MS = 1_000_000  # ns per ms


# ---- shared plumbing ---------------------------------------------------------

def _csv(out_dir, name: str, header: List[str], rows) -> str:
    path = Path(out_dir) / name
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path.name


def _fresh_ctx(scenario: Scenario, *labels, **kw) -> SimContext:
    seed = child_seed(scenario.seed, *labels) if labels else scenario.seed
    return make_context(scenario.geometry, scenario.profile,
                        scenario.guest_pages, seed=seed, **kw)


def _register_workloads(ctx: SimContext, scenario: Scenario):
    wls = build_workloads(scenario, ctx.tmap.host_pages)
    for wl, spec in zip(wls, scenario.tenants):
        register_tenant(ctx, wl.actor, domain=spec.domain)
    return wls


def _congruent_pool(ctx: SimContext, n_lines: int, offset: int = 0,
                    chunk: int = 512) -> List[int]:
    """Oracle-grouped congruent lines: allocate pages until one LLC cell
    holds n_lines lines at the offset. Harness staging only - the probes
    under test never see the oracle."""
    groups: Dict[tuple, List[int]] = {}
    while True:
        for pg in ctx.alloc_pages(chunk):  # raises when guest RAM runs out
            gva = SimContext.addr(pg, offset)
            cell = ctx.oracle_cell(gva)
            bucket = groups.setdefault(cell, [])
            bucket.append(gva)
            if len(bucket) >= n_lines:
                return bucket


# ---- eviction-set construction -----------------------------------------------------

def run_coverage(scenario: Scenario, out_dir) -> dict:
    """Empirical row coverage of f-set families vs the draw model.

    Per seeded run: build f_max sets in one (color group, page offset)
    partition and record which rows their targets landed in; the first f
    sets of that build are a valid f-family for every smaller f."""
    p = scenario.params
    f_values = sorted(int(f) for f in p.get("f_values", [2, 3, 4, 5, 6]))
    runs = int(p.get("runs", 400))
    safety = int(p.get("safety", 3))
    g = scenario.geometry
    n_rows = max(1, evset.cells_per_partition(g, LLC) // g.n_slices)
    f_max = f_values[-1]
    pool_n = evset.pool_size(g, LLC, safety)
    covered = {f: 0 for f in f_values}
    for r in range(runs):
        ctx = make_context(g, scenario.profile, scenario.guest_pages,
                           seed=child_seed(scenario.seed, "run", r))
        pool = [SimContext.addr(pg, 0) for pg in ctx.alloc_pages(pool_n)]
        rep = build_all_at_offset(ctx, LLC, 0, pool, max_sets=f_max)
        rows_seen = [ctx.oracle_row(s.target) for s in rep.sets]
        for f in f_values:
            covered[f] += len(set(rows_seen[:f]))
    rows = []
    emp, theo = {}, {}
    for f in f_values:
        emp[f] = covered[f] / (n_rows * runs)
        theo[f] = coverage_theoretical(g.n_slices, f, n_rows)
        rows.append([f, runs, covered[f], n_rows * runs,
                     f"{100 * emp[f]:.4f}", f"{100 * theo[f]:.4f}"])
    _csv(out_dir, "coverage.csv",
         ["f", "runs", "rows_covered", "rows_total",
          "empirical_pct", "theoretical_pct"], rows)
    summary = {
        "runs": runs,
        "rows_per_partition": n_rows,
        "coverage_by_f": {str(f): round(emp[f], 6) for f in f_values},
        "theoretical_by_f": {str(f): round(theo[f], 6) for f in f_values},
        "max_abs_gap_pct": round(
            max(abs(emp[f] - theo[f]) for f in f_values) * 100, 4),
    }
    if len(f_values) == 1:
        summary["coverage"] = round(emp[f_values[0]], 6)
    return summary


def run_evset_build(scenario: Scenario, out_dir) -> dict:
    """Full palette construction; emits the set list and a per-partition
    coverage report."""
    p = scenario.params
    level = {"l2": L2, "llc": LLC}[str(p.get("level", "llc")).lower()]
    f = int(p["f"]) if "f" in p else None
    n_offsets = int(p.get("n_offsets", 2))
    offsets = [o << LINE_SHIFT for o in range(n_offsets)]
    n_workers = int(p.get("n_workers", 1))
    safety = int(p.get("safety", 3))
    ctx = _fresh_ctx(scenario)
    palette = build_parallel(ctx, level, f=f, offsets=offsets,
                             n_workers=n_workers, safety=safety)
    sets = palette.all_sets()
    _csv(out_dir, "evsets.csv", ["level", "offset", "color", "member_gva..."],
         [[LEVEL_NAMES[s.level], s.offset, s.color] + list(s.members)
          for s in sets])
    cells = evset.cells_per_partition(ctx.geometry, level)
    _csv(out_dir, "coverage_report.csv",
         ["color", "offset", "sets_built", "cells_in_partition",
          "strays", "leftover", "tests"],
         [[c, off, len(rep.sets), cells, len(rep.strays),
           len(rep.leftover), rep.tests]
          for (c, off), rep in sorted(palette.partitions.items())])
    dup_groups = (detect_duplicates(ctx, sets)
                  if p.get("check_duplicates", True) and len(sets) <= 64
                  else [])
    return {
        "level": LEVEL_NAMES[level],
        "sets": len(sets),
        "partitions": len(palette.partitions),
        "cells_per_partition": cells,
        "tests": palette.total_tests,
        "duplicate_groups": len(dup_groups),
        "pool_pages": evset.pool_size(ctx.geometry, level, safety),
    }


def run_assoc_probe(scenario: Scenario, out_dir) -> dict:
    """Way-mask rediscovery: cap the prober's ways, probe the minimal set
    size, expect the mask back - per replacement policy."""
    p = scenario.params
    masks = [int(m) for m in p.get("masks", [3, 5, 8, 11])]
    runs = int(p.get("runs", 10))
    policies = [str(x) for x in p.get("policies", ["lru", "plru", "random"])]
    if max(masks) > scenario.geometry.llc_ways:
        raise ValidationError("mask exceeds llc_ways")
    rows, stats = [], {}
    for pol in policies:
        g = dataclasses.replace(scenario.geometry, replacement=pol)
        for m in masks:
            sizes = []
            for r in range(runs):
                ctx = make_context(
                    g, scenario.profile, scenario.guest_pages,
                    seed=child_seed(scenario.seed, "assoc", pol, m, r))
                pool = _congruent_pool(ctx, max(m + 3, 6))
                size = probe_associativity(ctx, pool, LLC, mask_ways=m)
                sizes.append(size)
                rows.append([pol, m, r, size])
            stats[(pol, m)] = sizes
    _csv(out_dir, "assoc.csv", ["policy", "mask", "run", "probed"], rows)
    by_policy: Dict[str, dict] = {}
    ok = True
    for pol in policies:
        d = {}
        for m in masks:
            sizes = stats[(pol, m)]
            modal = Counter(sizes).most_common(1)[0][0]
            mean = sum(sizes) / len(sizes)
            d[str(m)] = {"modal": modal, "mean": round(mean, 3)}
            ok = ok and modal == m and abs(mean - m) <= 1.0
        by_policy[pol] = d
    return {"masks": masks, "runs": runs, "policies": policies,
            "by_policy": by_policy, "all_match": bool(ok)}


# ---- monitoring ----------------------------------------------------------------

def run_manual_flush(scenario: Scenario, out_dir) -> dict:
    """Ground-truth detection check: flush exactly k primed lines between
    prime and probe; the probe must report exactly k evictions."""
    p = scenario.params
    flushes = [int(k) for k in p.get("flushes", [2, 4, 6, 8, 11])]
    ctx = _fresh_ctx(scenario)
    g = ctx.geometry
    if max(flushes) > g.llc_ways:
        raise ValidationError("cannot flush more lines than the set holds")
    pool = [SimContext.addr(pg, 0)
            for pg in ctx.alloc_pages(evset.pool_size(g, LLC, 3))]
    rep = build_all_at_offset(ctx, LLC, 0, pool, max_sets=1)
    if not rep.sets:
        raise PruneError("monitored set construction came up empty")
    monitor = ContentionMonitor(
        ctx, rep.sets,
        MonitorConfig(interval_ms=2.0, window_ms=1.0, f=1, adaptive=False))
    mset = monitor.sets[0]
    detected = []
    for k in flushes:
        ctx.warm()
        monitor.prime(mset)
        for member in mset.evset.members[:k]:
            ctx.state.flush_line(ctx.resolve(member))
        evicted, _unknown = monitor.probe(mset)
        detected.append(evicted)
    _csv(out_dir, "manual_flush.csv", ["flushed", "detected"],
         list(zip(flushes, detected)))
    return {"flushed": flushes, "detected": detected,
            "set_size": len(mset.evset.members),
            "exact": detected == flushes}


def run_window_sweep(scenario: Scenario, out_dir) -> dict:
    """Detected-eviction fraction vs probe window width, per co-tenant
    intensity profile."""
    p = scenario.params
    windows = [float(w) for w in
               p.get("windows", [0.1, 0.3, 1.0, 2.0, 3.5, 7.0, 12.0, 20.0])]
    cycles = int(p.get("cycles", 4))
    f = int(p.get("f", 4))
    region_pages = int(p.get("region_pages", 1024))
    profiles = p.get("profiles") or [
        {"name": "polluter", "rate_per_ms": 800.0},
        {"name": "moderate", "rate_per_ms": 150.0},
        {"name": "light", "rate_per_ms": 30.0},
    ]
    rows = []
    prof_summary: Dict[str, dict] = {}
    for prof in profiles:
        name = str(prof["name"])
        rate = float(prof["rate_per_ms"])
        ctx = _fresh_ctx(scenario, "sweep", name)
        palette = build_parallel(ctx, LLC, f=f, offsets=[0])
        wl = TenantWorkload(kind="polluter", actor=100, rate_per_ms=rate,
                            region_base_page=ctx.tmap.host_pages + 65536,
                            region_pages=region_pages)
        register_tenant(ctx, 100,
                        domain=ctx.state.actor_domain(ctx.prober))
        detected = []
        for w in windows:
            cfg = MonitorConfig(interval_ms=w + 1.0, window_ms=w,
                                min_window_ms=min(w, 1.0), f=f,
                                adaptive=False)
            mon = ContentionMonitor(ctx, palette.all_sets(), cfg, [wl])
            reports = mon.run(cycles)
            ev = sum(s.evicted for r in reports for s in r.samples)
            cn = sum(s.counted for r in reports for s in r.samples)
            pct = 100.0 * ev / cn if cn else 0.0
            detected.append(pct)
            rows.append([name, rate, w, f"{pct:.3f}"])
        prof_summary[name] = {
            "rate_per_ms": rate,
            "detected_pct": [round(d, 3) for d in detected],
            "saturation_window_ms": next(
                (w for w, d in zip(windows, detected) if d >= 95.0), None),
        }
    _csv(out_dir, "window_sweep.csv",
         ["profile", "rate_per_ms", "window_ms", "detected_pct"], rows)
    tol = float(p.get("tolerance_pct", 5.0))
    nondecreasing = {
        name: all(b >= a - tol for a, b in zip(d["detected_pct"],
                                               d["detected_pct"][1:]))
        for name, d in prof_summary.items()}
    return {"windows_ms": windows, "cycles": cycles,
            "profiles": prof_summary, "nondecreasing": nondecreasing}


def run_adaptive_window(scenario: Scenario, out_dir) -> dict:
    """Window controller trace: saturating churn shrinks the window step by
    step to the floor; silence snaps it back to the configured width."""
    p = scenario.params
    heavy_cycles = int(p.get("heavy_cycles", 8))
    quiet_cycles = int(p.get("quiet_cycles", 4))
    rate = float(p.get("rate_per_ms", 6000.0))
    cfg = scenario.monitor or MonitorConfig(interval_ms=20.0, window_ms=7.0,
                                            f=2)
    ctx = _fresh_ctx(scenario)
    palette = build_parallel(ctx, LLC, f=cfg.f, offsets=[0])
    wl = TenantWorkload(kind="polluter", actor=100, rate_per_ms=rate,
                        region_base_page=ctx.tmap.host_pages + 65536,
                        region_pages=int(p.get("region_pages", 2048)),
                        stop_ms=heavy_cycles * cfg.interval_ms)
    register_tenant(ctx, 100, domain=ctx.state.actor_domain(ctx.prober))
    mon = ContentionMonitor(ctx, palette.all_sets(), cfg, [wl])
    reports = mon.run(heavy_cycles + quiet_cycles)
    _csv(out_dir, "adaptive_window.csv",
         ["cycle", "window_before_ms", "window_after_ms", "evicted",
          "all_full"],
         [[r.index, r.window_ms, r.window_after_ms, r.total_evicted,
           int(r.all_full)] for r in reports])
    saturated = [r for r in reports if r.all_full]
    quiet = [r for r in reports if r.total_evicted == 0]
    shrink_ok = all(
        r.window_after_ms == max(cfg.min_window_ms,
                                 r.window_ms - cfg.shrink_ms)
        for r in saturated)
    return {
        "windows_ms": [r.window_after_ms for r in reports],
        "saturated_cycles": len(saturated),
        "quiet_cycles": len(quiet),
        "shrink_rule_held": bool(shrink_ok and saturated),
        "reset_rule_held": bool(quiet) and all(
            r.window_after_ms == cfg.window_ms for r in quiet),
        "reached_floor": any(r.window_after_ms == cfg.min_window_ms
                             for r in reports),
    }


def run_quiescent(scenario: Scenario, out_dir) -> dict:
    """No co-tenants at all: every probe of every cycle must come back with
    zero evictions."""
    p = scenario.params
    cycles = int(p.get("cycles", 10))
    cfg = scenario.monitor or MonitorConfig(interval_ms=5.0, window_ms=2.0,
                                            f=int(p.get("f", 4)))
    ctx = _fresh_ctx(scenario)
    palette = build_parallel(ctx, LLC, f=cfg.f, offsets=[0])
    mon = ContentionMonitor(ctx, palette.all_sets(), cfg)
    reports = mon.run(cycles)
    _csv(out_dir, "quiescent.csv",
         ["cycle", "set_id", "evicted", "unknown", "total"],
         [[r.index, s.set_id, s.evicted, s.unknown, s.total]
          for r in reports for s in r.samples])
    samples = [s for r in reports for s in r.samples]
    zero = sum(1 for s in samples if s.evicted == 0)
    return {"cycles": cycles, "sets": len(mon.sets),
            "samples": len(samples),
            "pct_samples_zero": round(100.0 * zero / len(samples), 4),
            "total_evicted": sum(s.evicted for s in samples)}


def run_monitor(scenario: Scenario, out_dir) -> dict:
    """Generic monitoring run over the scenario's tenants; the per-interval
    and aggregate CSVs other tools consume."""
    cfg = scenario.monitor or MonitorConfig()
    p = scenario.params
    ctx = _fresh_ctx(scenario)
    wls = _register_workloads(ctx, scenario)
    offsets = [int(o) << LINE_SHIFT for o in p.get("offsets_lines", [0])]
    palette = build_parallel(ctx, LLC, f=cfg.f, offsets=offsets,
                             safety=int(p.get("safety", 3)))
    mon = ContentionMonitor(ctx, palette.all_sets(), cfg, wls)
    n_cycles = max(1, int(scenario.duration_ms // cfg.interval_ms))
    interval_rows = []
    reports = []
    for _ in range(n_cycles):
        start = ctx.clock.now_ns
        rep = mon.monitor_cycle()
        for s in rep.samples:
            interval_rows.append(
                [f"{rep.t_start_ms:.3f}", s.set_id, s.color, s.domain,
                 f"{s.rate:.4f}", f"{mon.sets[s.set_id].ewma:.4f}"])
        mon._step_tenants(start + int(cfg.interval_ms * MS))
        reports.append(rep)
    _csv(out_dir, "monitor_intervals.csv",
         ["t_ms", "set_id", "color", "domain", "raw_rate", "ewma"],
         interval_rows)
    _csv(out_dir, "monitor_aggregate.csv",
         ["set_id", "color", "domain", "cycles", "ewma"],
         [[i, m.color, m.domain, len(reports), f"{m.ewma:.4f}"]
          for i, m in enumerate(mon.sets)])
    return {
        "cycles": n_cycles,
        "sets": len(mon.sets),
        "final_window_ms": mon.window_ms,
        "rates_by_color": {str(k): round(v, 4)
                           for k, v in mon.rates_by_color().items()},
        "rates_by_domain": {str(k): round(v, 4)
                            for k, v in mon.rates_by_domain().items()},
        "prime_violations": sum(1 for r in reports for s in r.samples
                                if s.violated),
    }


# ---- virtual coloring ---------------------------------------------------------

def run_color_ident(scenario: Scenario, out_dir) -> dict:
    """Build the filter palette, classify a page budget, and cross-tabulate
    virtual colors against the oracle's."""
    p = scenario.params
    budget = int(p.get("budget", 1500))
    parallel = bool(p.get("parallel", True))
    ctx = _fresh_ctx(scenario)
    filters = build_color_filters(ctx, safety=int(p.get("safety", 3)))
    free = ColoredFreeLists(ctx.geometry.n_l2_colors)
    cont: Counter = Counter()
    for pg in ctx.alloc_pages(budget):
        if parallel:
            c = classify_page_parallel(ctx, pg, filters)
        else:
            c = classify_page_sequential(ctx, pg, filters)
        free.add(pg, c)
        cont[(c, ctx.oracle_color(SimContext.addr(pg, 0), L2))] += 1
    _csv(out_dir, "contingency.csv",
         ["virtual_color", "oracle_color", "count"],
         [[v, o, n] for (v, o), n in sorted(cont.items())])
    _csv(out_dir, "histogram.csv", ["color", "count"],
         sorted(free.histogram.items()))
    _csv(out_dir, "vcol_pages.csv", ["color", "page_gva"],
         [[c, hex(pg << 12)] for c in sorted(free.lists)
          for pg in free.lists[c]])
    v2o: Dict[int, int] = {}
    perm = True
    for (v, o), _n in cont.items():
        if v in v2o and v2o[v] != o:
            perm = False
        v2o.setdefault(v, o)
    perm = perm and len(set(v2o.values())) == len(v2o)
    agreement = sum(n for (v, o), n in cont.items()
                    if v2o.get(v) == o) / budget
    dup_groups = detect_duplicates(ctx, filters)
    return {
        "filters": len(filters),
        "expected_filters": ctx.geometry.n_l2_colors,
        "pages": budget,
        "permutation": bool(perm),
        "agreement": round(agreement, 6),
        "duplicate_groups": len(dup_groups),
        "histogram": {str(k): v for k, v in sorted(free.histogram.items())},
    }


def run_remap_skew(scenario: Scenario, out_dir) -> dict:
    """Guest-color usefulness under remapping: contiguous backing scores
    1.0, a full shuffle collapses, staged remaps decay monotonically."""
    p = scenario.params
    stages = [float(x) for x in p.get("stages", [0.25, 0.25, 0.25, 0.25])]
    g = scenario.geometry
    n_pages = scenario.guest_pages
    contig = build_translation(n_pages, FragmentationProfile("contiguous"),
                               child_rng(scenario.seed, "contig"))
    o_contig = gpa_color_overlap(contig, g, L2)
    shuffled = build_translation(n_pages,
                                 FragmentationProfile("fragmented", 1.0),
                                 child_rng(scenario.seed, "shuffled"))
    o_shuffled = gpa_color_overlap(shuffled, g, L2)
    rows = [["contiguous", "", f"{o_contig:.6f}"],
            ["shuffled", "", f"{o_shuffled:.6f}"]]
    tmap, staged, cum = contig, [], 0.0
    for i, frac in enumerate(stages):
        tmap = apply_remap(tmap, RemapEvent(at_ms=float(i), fraction=frac),
                           child_rng(scenario.seed, "remap", i))
        cum = min(1.0, cum + frac)
        o = gpa_color_overlap(tmap, g, L2)
        staged.append(o)
        rows.append([f"stage{i}", f"{cum:.2f}", f"{o:.6f}"])
    _csv(out_dir, "remap_skew.csv",
         ["map", "cumulative_fraction", "overlap"], rows)
    seq = [o_contig] + staged
    return {
        "pages": n_pages,
        "contiguous_overlap": round(o_contig, 6),
        "shuffled_overlap": round(o_shuffled, 6),
        "staged_overlap": [round(x, 6) for x in staged],
        "monotone_decreasing": all(b < a for a, b in zip(seq, seq[1:])),
    }


# ---- placement / allocation policies --------------------------------------------

def run_cas_steering(scenario: Scenario, out_dir) -> dict:
    """Contention-aware task placement vs the plain round-robin baseline on
    identical activation sequences."""
    p = scenario.params
    kw = dict(
        intervals=int(p.get("intervals", 25)),
        slots=int(p.get("slots", 20)),
        interval_ms=float(p.get("interval_ms", 10.0)),
        window_ms=float(p.get("window_ms", 2.0)),
        f_per_domain=int(p.get("f_per_domain", 2)),
        polluter_rate=float(p.get("polluter_rate", 600.0)),
    )
    results = {}
    for pol in ("cas", "baseline"):
        res = run_steering_scenario(scenario.seed, pol, **kw)
        _csv(out_dir, f"{pol}_placement.csv",
             ["interval", "task", "domain", "tier"],
             [[r.interval, r.task, r.domain, r.tier] for r in res.rows])
        results[pol] = res
    _csv(out_dir, "domain_rates.csv", ["interval", "domain", "ewma"],
         [[i, d, f"{v:.4f}"]
          for i, rates in enumerate(results["cas"].rates)
          for d, v in sorted(rates.items())])
    return {
        "polluted_domain": 0,
        "sensitive_residency": {pol: round(r.residency["sensitive"], 4)
                                for pol, r in results.items()},
        "tier_changes": {pol: r.tier_changes for pol, r in results.items()},
    }


def run_cap_absorb(scenario: Scenario, out_dir) -> dict:
    """Contention-ranked page-cache allocation vs color-id order, same seed:
    the hot zone absorbs the streaming scan, the reuse workload keeps its
    lines."""
    p = scenario.params
    kw = dict(
        intervals=int(p.get("intervals", 20)),
        scan_pages_per_interval=int(p.get("scan_pages_per_interval", 24)),
        budget_pages=int(p.get("budget_pages", 64)),
        stock_per_color=int(p.get("stock_per_color", 80)),
        hot_virtual_color=int(p.get("hot_virtual_color", 5)),
    )
    out = {}
    for label, ranked in (("ranked", True), ("unranked", False)):
        r = run_cap_scenario(scenario.seed, ranking=ranked, **kw)
        _csv(out_dir, f"cap_{label}.csv",
             ["interval", "actor", "hits", "misses", "alloc_color"],
             [[row.interval, row.actor, row.hits, row.misses,
               row.alloc_color] for row in r.rows])
        out[label] = r
    ranked, unranked = out["ranked"], out["unranked"]
    return {
        "reuse_evictions": {"ranked": ranked.reuse_evictions,
                            "unranked": unranked.reuse_evictions},
        "improved": ranked.reuse_evictions < unranked.reuse_evictions,
        "scan_fills": ranked.scan_fills,
        "scan_fill_violations": ranked.scan_fill_violations,
        "phases": ranked.phases,
        "recolors": ranked.recolors,
        "hot_virtual_color": ranked.hot_virtual_color,
    }


def run_cap_confine(scenario: Scenario, out_dir) -> dict:
    """Zone confinement: with a budget wide enough to avoid recycling, every
    scan fill must land in the zone of its allocation color, advancing one
    zone at a time as stock drains."""
    p = scenario.params
    intervals = int(p.get("intervals", 12))
    scan = int(p.get("scan_pages_per_interval", 30))
    r = run_cap_scenario(
        scenario.seed, ranking=True, intervals=intervals,
        scan_pages_per_interval=scan,
        budget_pages=int(p.get("budget_pages", intervals * scan + 8)),
        stock_per_color=int(p.get("stock_per_color", 40)),
        hot_virtual_color=int(p.get("hot_virtual_color", 5)),
        poisoner_moves_to=(int(p["move_to"]) if "move_to" in p else None),
        move_at_interval=int(p.get("move_at", 0)),
    )
    _csv(out_dir, "cap_confine.csv",
         ["interval", "actor", "hits", "misses", "alloc_color"],
         [[row.interval, row.actor, row.hits, row.misses, row.alloc_color]
          for row in r.rows])
    return {
        "scan_fills": r.scan_fills,
        "violations": r.scan_fill_violations,
        "confined": r.scan_fill_violations == 0,
        "phases": r.phases,
        "n_phases": len(r.phases),
        "recolors": r.recolors,
    }


# ---- dispatch ------------------------------------------------------------------

EXPERIMENTS = {
    "coverage": run_coverage,
    "evset_build": run_evset_build,
    "assoc_probe": run_assoc_probe,
    "manual_flush": run_manual_flush,
    "window_sweep": run_window_sweep,
    "adaptive_window": run_adaptive_window,
    "quiescent": run_quiescent,
    "color_ident": run_color_ident,
    "remap_skew": run_remap_skew,
    "cas_steering": run_cas_steering,
    "cap_absorb": run_cap_absorb,
    "cap_confine": run_cap_confine,
    "monitor": run_monitor,
}


def run_scenario(scenario: Scenario, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    driver = EXPERIMENTS.get(scenario.experiment)
    if driver is None:
        raise ValidationError(f"unknown experiment {scenario.experiment!r}")
    summary = driver(scenario, out_dir)
    summary = {"scenario": scenario.name, "experiment": scenario.experiment,
               "seed": scenario.seed, "policy": scenario.policy, **summary}
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
