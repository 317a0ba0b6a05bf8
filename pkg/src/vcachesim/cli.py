"""Command line front end.

    vcachesim run scenarios/coverage_f4.toml --out out/coverage
    vcachesim list
    vcachesim validate --scenario my.toml
    vcachesim build-evsets --scenario evset_build.toml --out out/evsets
    vcachesim vcol --scenario color_ident.toml --budget 2000
    vcachesim vscan --scenario monitor_demo.toml --interval 1000 --window 7 --f 4

Scenario arguments accept a filesystem path or the name of a bundled
scenario (see `list`). Exit codes: 0 success, 2 validation failure,
3 invariant abort (a state dump is written next to the outputs).
"""

import argparse
import dataclasses
import json
import sys
import traceback
from importlib import resources
from pathlib import Path
from typing import Optional

from .cache import load_geometry
from .context import last_context
from .errors import InvariantError, ValidationError
from .experiments import run_color_ident, run_evset_build, run_monitor, run_scenario
from .mem import build_translation
from .rng import child_rng
from .scenario import BUILTIN_GEOMETRIES, Scenario, load_scenario
from .vscan import MonitorConfig


def _bundled_dir():
    return resources.files("vcachesim") / "scenarios"


def _bundled_names() -> list:
    try:
        return sorted(p.name for p in _bundled_dir().iterdir()
                      if p.name.endswith(".toml"))
    except (FileNotFoundError, ModuleNotFoundError):
        return []


def _resolve_scenario_path(ref: str) -> Path:
    p = Path(ref)
    if p.exists():
        return p
    for name in (ref, ref + ".toml"):
        c = _bundled_dir() / name
        if c.is_file():
            return Path(str(c))
    raise ValidationError(
        f"scenario {ref!r} not found (not a file, not one of the bundled "
        f"scenarios: {', '.join(_bundled_names()) or 'none'})")


def _resolve_geometry(ref: Optional[str]):
    if ref is None:
        return None
    if ref in BUILTIN_GEOMETRIES:
        return BUILTIN_GEOMETRIES[ref]
    return load_geometry(ref)


def _load(args) -> Scenario:
    ref = getattr(args, "scenario_pos", None) or args.scenario
    if not ref:
        raise ValidationError("no scenario given (positional or --scenario)")
    return load_scenario(_resolve_scenario_path(ref),
                         geometry_override=_resolve_geometry(args.geometry),
                         seed_override=args.seed)


def _out_dir(args, scenario: Scenario) -> Path:
    out = Path(args.out) if args.out else Path("out") / scenario.name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _maybe_dump_map(args, scenario: Scenario, out: Path) -> None:
    if not getattr(args, "dump_map", False):
        return
    tmap = build_translation(scenario.guest_pages, scenario.profile,
                             child_rng(scenario.seed, "translation"))
    path = out / "map.txt"
    with open(path, "w") as fh:
        tmap.dump(fh)
    print(f"wrote {path}")


# ---- subcommands -------------------------------------------------------------

def _cmd_run(args) -> int:
    scenario = _load(args)
    out = _out_dir(args, scenario)
    _maybe_dump_map(args, scenario, out)
    summary = run_scenario(scenario, out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"wrote {out}/summary.json")
    return 0


def _cmd_list(args) -> int:
    names = _bundled_names()
    if not names:
        print("no bundled scenarios")
        return 0
    rows = []
    for name in names:
        try:
            sc = load_scenario(Path(str(_bundled_dir() / name)))
            rows.append((name, sc.experiment, sc.policy, sc.seed))
        except ValidationError as e:
            rows.append((name, f"INVALID: {e}", "", ""))
    width = max(len(r[0]) for r in rows)
    for name, exp, pol, seed in rows:
        print(f"{name:<{width}}  experiment={exp}  policy={pol}  seed={seed}")
    return 0


def _cmd_validate(args) -> int:
    scenario = _load(args)
    print(f"ok: {scenario.source} "
          f"(experiment={scenario.experiment}, policy={scenario.policy}, "
          f"seed={scenario.seed}, duration_ms={scenario.duration_ms})")
    return 0


def _cmd_build_evsets(args) -> int:
    scenario = _load(args)
    out = _out_dir(args, scenario)
    _maybe_dump_map(args, scenario, out)
    if args.level:
        scenario.params["level"] = args.level
    summary = run_evset_build(scenario, out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"wrote {out}/evsets.csv and {out}/coverage_report.csv")
    return 0


def _cmd_vcol(args) -> int:
    scenario = _load(args)
    out = _out_dir(args, scenario)
    _maybe_dump_map(args, scenario, out)
    if args.budget is not None:
        scenario.params["budget"] = args.budget
    summary = run_color_ident(scenario, out)
    report = Path(args.report) if args.report else out / "histogram.csv"
    if report != out / "histogram.csv":
        report.parent.mkdir(parents=True, exist_ok=True)
        report.write_bytes((out / "histogram.csv").read_bytes())
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"wrote {report} and {out}/vcol_pages.csv")
    return 0


def _cmd_vscan(args) -> int:
    scenario = _load(args)
    cfg = scenario.monitor or MonitorConfig()
    overrides = {}
    if args.interval is not None:
        overrides["interval_ms"] = float(args.interval)
    if args.window is not None:
        overrides["window_ms"] = float(args.window)
        overrides["min_window_ms"] = min(cfg.min_window_ms,
                                         float(args.window))
    if args.f is not None:
        overrides["f"] = args.f
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    scenario = dataclasses.replace(scenario, monitor=cfg)
    out = _out_dir(args, scenario)
    _maybe_dump_map(args, scenario, out)
    summary = run_monitor(scenario, out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"wrote {out}/monitor_intervals.csv and {out}/monitor_aggregate.csv")
    return 0


# ---- wiring ------------------------------------------------------------------

def _add_common(sub, positional_scenario: bool = True) -> None:
    if positional_scenario:
        sub.add_argument("scenario_pos", nargs="?", metavar="SCENARIO",
                         help="scenario path or bundled name")
    sub.add_argument("--scenario", metavar="PATH",
                     help="scenario path or bundled name")
    sub.add_argument("--seed", type=int, metavar="N",
                     help="override the scenario seed")
    sub.add_argument("--out", metavar="DIR",
                     help="output directory (default out/<scenario name>)")
    sub.add_argument("--geometry", metavar="PATH",
                     help="geometry .cfg path or builtin name "
                          "(table1, desk); overrides the scenario")
    sub.add_argument("--dump-map", action="store_true",
                     help="also write the gpa->hpa page map (map.txt)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vcachesim",
        description="Deterministic cache-hierarchy simulator with an "
                    "eviction-set probing stack and placement/allocation "
                    "policies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a scenario's experiment")
    _add_common(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("list", help="list bundled scenarios")
    p.set_defaults(func=_cmd_list)

    p = sub.add_parser("validate", help="load and validate a scenario")
    _add_common(p)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("build-evsets",
                       help="construct eviction sets and report coverage")
    _add_common(p)
    p.add_argument("--level", choices=["l2", "llc"],
                   help="cache level to build against")
    p.set_defaults(func=_cmd_build_evsets)

    p = sub.add_parser("vcol",
                       help="build color filters and classify pages")
    _add_common(p)
    p.add_argument("--budget", type=int, metavar="N",
                   help="pages to classify")
    p.add_argument("--report", metavar="PATH",
                   help="also copy the color histogram to this path")
    p.set_defaults(func=_cmd_vcol)

    p = sub.add_parser("vscan", help="run the contention monitor")
    _add_common(p)
    p.add_argument("--interval", type=float, metavar="MS",
                   help="monitor cycle cadence")
    p.add_argument("--window", type=float, metavar="MS",
                   help="prime-to-probe window")
    p.add_argument("--f", type=int, metavar="N",
                   help="monitored sets per partition")
    p.set_defaults(func=_cmd_vscan)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except InvariantError as e:
        tb = traceback.extract_tb(sys.exc_info()[2])
        where = tb[-1].filename if tb else "<unknown>"
        print(f"invariant abort in {Path(where).name}: {e}", file=sys.stderr)
        ctx = last_context()
        if ctx is not None:
            dump = Path(args.out or "out") / "invariant_state.csv"
            dump.parent.mkdir(parents=True, exist_ok=True)
            with open(dump, "w", newline="") as fh:
                ctx.state.dump_csv(fh)
            print(f"state dump: {dump}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
