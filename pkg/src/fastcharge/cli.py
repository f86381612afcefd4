"""Command-line entry point: ``fastcharge <command> [options]``.

Exit codes: 0 success, 1 model or validation failure, 2 usage error.
Every written artifact starts with (CSV/text) or contains (JSON) the
resolved configuration and seed.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .demand import default_profile, generate_demand
from .io import demand_to_csv, load_demand, load_scenario, save_scenario, synthetic_scenario
from .model import ChargerLayout, DemandProfile, ScenarioError, ValidationError, validate_layout
from .optimizer import SimulationBlackbox, enumerate_layouts, kmeans_layout, so_optimize
from .policies import Policy
from .reporting import (
    EmissionsInput,
    compare_policies,
    emissions_report,
    format_rows,
)
from .simulator import SimulationAbort, run_simulation

LOG = logging.getLogger(__name__)

SCENARIO_DIR_ENV = "FASTCHARGE_SCENARIO_DIR"
POLICIES = [p.value for p in Policy]


class UsageError(Exception):
    """Bad or missing command-line input (exit code 2)."""


# -- helpers -------------------------------------------------------------

def _resolve_scenario(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    base = os.environ.get(SCENARIO_DIR_ENV)
    if base and (Path(base) / path).exists():
        return Path(base) / path
    raise UsageError(f"scenario file not found: {path}")


def _read_json(p: Path):
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _load_profile(path: str | None) -> DemandProfile:
    if path is None:
        return default_profile()
    p = Path(path)
    if not p.exists():
        raise UsageError(f"profile file not found: {path}")
    data = _read_json(p)
    if "hourly_weights" not in data:
        data = {**dataclasses.asdict(default_profile()), **data}
    if "region" in data:
        data["region"] = tuple(data["region"])
    return DemandProfile(**data)


def _config(args, **extra) -> dict:
    # destinations, verbosity and worker count do not change results
    skip = {"func", "out", "event_log", "dump_assignments", "verbose", "jobs"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    cfg.update(extra)
    cfg["version"] = __version__
    return cfg


def _header(cfg: dict) -> list[str]:
    return ["config: " + json.dumps(cfg, sort_keys=True, default=str)]


def _commented(text: str, cfg: dict) -> str:
    return "".join(f"# {line}\n" for line in _header(cfg)) + text


def _emit(args, name: str, text: str) -> None:
    """Write to ``--out/name`` when an output directory is given, else stdout."""
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
        LOG.info("wrote %s", out / name)
    else:
        sys.stdout.write(text)


def _write_aux(args, name: str, text: str) -> None:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _scenario(args):
    if not args.scenario:
        LOG.info("no --scenario given; using the built-in synthetic scenario (seed %d)", args.seed)
        return synthetic_scenario(seed=args.seed)
    sc = load_scenario(_resolve_scenario(args.scenario))
    if getattr(args, "epoch_min", None) is not None:
        sc = dataclasses.replace(sc, fleet=dataclasses.replace(sc.fleet, epoch_len=args.epoch_min))
    return sc


def _demand(args, scenario, seed: int, n: int | None = None):
    if getattr(args, "demand", None):
        p = Path(args.demand)
        if not p.exists():
            raise UsageError(f"demand file not found: {args.demand}")
        return load_demand(p)
    n = args.n if n is None else n
    return generate_demand(_load_profile(args.profile), n, seed, scenario.fleet)


def _layout(args, scenario, requests, seed: int) -> ChargerLayout:
    if getattr(args, "layout", None):
        p = Path(args.layout)
        if not p.exists():
            raise UsageError(f"layout file not found: {args.layout}")
        data = _read_json(p)
        counts = data.get("layout", data) if isinstance(data, dict) else None
        if not isinstance(counts, dict) or not all(isinstance(v, (int, float)) for v in counts.values()):
            raise ScenarioError(f"{p}: layout must map site ids to charger counts")
        layout = ChargerLayout({str(k): v for k, v in counts.items()})
        validate_layout(layout, scenario.sites,
                        scenario.total_fast if scenario.fast_total is not None else layout.total)
        return layout
    if getattr(args, "kmeans", False) or (not scenario.layout.counts and scenario.total_fast > 0):
        drops = np.array([r.destination for r in requests]) if requests else np.zeros((0, 2))
        return kmeans_layout(drops, scenario.sites, scenario.total_fast, seed)
    return scenario.layout


# -- commands ------------------------------------------------------------

def cmd_make_scenario(args) -> int:
    sc = synthetic_scenario(n_sites=args.sites, n_depots=args.depots, n_vehicles=args.vehicles,
                            slow_per_site=args.slow_per_site, fast_cap=args.fast_cap, fast_total=args.fast_total,
                            seed=args.seed)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        save_scenario(sc, Path(args.out) / "scenario.json")
    else:
        from .io import scenario_to_dict

        sys.stdout.write(json.dumps(scenario_to_dict(sc), indent=2) + "\n")
    return 0


def cmd_generate_demand(args) -> int:
    if args.n < 0:
        raise UsageError("-n must be >= 0")
    sc = _scenario(args) if args.scenario else None
    params = sc.fleet if sc else None
    reqs = generate_demand(_load_profile(args.profile), args.n, args.seed, params)
    _emit(args, "demand.csv", demand_to_csv(reqs, _header(_config(args))))
    return 0


def _simulate_one(job):
    scenario, layout, requests, policy, seed = job
    return run_simulation(scenario, layout, requests, policy, seed)


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    reqs = _demand(args, sc, args.seed)
    layout = _layout(args, sc, reqs, args.seed)
    report = run_simulation(sc, layout, reqs, args.policy, args.seed, keep_assignments=bool(args.dump_assignments))
    cfg = _config(args, resolved_layout=dict(sorted(layout.counts.items())))
    _emit(args, "report.json", report.to_json(cfg))
    if args.event_log:
        Path(args.event_log).write_text(_commented(report.events_csv(), cfg))
    if args.dump_assignments:
        d = Path(args.dump_assignments)
        d.mkdir(parents=True, exist_ok=True)
        for k, (t, text) in enumerate(report.assignment_dumps):
            (d / f"epoch_{k:03d}_t{t:.0f}.csv").write_text(_commented(text, cfg))
    LOG.info("Z = %.2f min, served %.1f%%", report.Z, 100 * report.served_rate)
    return 0


def cmd_compare(args) -> int:
    sc = _scenario(args)
    policies = args.policies.split(",") if args.policies else POLICIES
    bad = [p for p in policies if p not in POLICIES]
    if bad:
        raise UsageError(f"unknown policies {bad}; choose from {POLICIES}")
    levels = [int(x) for x in str(args.n).split(",")]
    rows = []
    for n in levels:
        jobs, keys = [], []
        for s in range(args.seeds):
            seed = args.seed + s
            reqs = _demand(args, sc, seed, n)
            layout = _layout(args, sc, reqs, seed)
            for p in policies:
                jobs.append((sc, layout, reqs, p, seed))
                keys.append(p)
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                reports = list(pool.map(_simulate_one, jobs))
        else:
            reports = [_simulate_one(j) for j in jobs]
        grouped = {p: [r for k, r in zip(keys, reports) if k == p] for p in policies}
        for row in compare_policies(grouped):
            rows.append({"n_requests": n, **row} if len(levels) > 1 else row)
    cfg = _config(args)
    text = format_rows(rows, args.format)
    if args.format == "json":
        text = json.dumps({"config": cfg, "rows": rows}, indent=2, sort_keys=True) + "\n"
    elif len(levels) > 1:
        from .reporting import COLUMNS, format_csv, format_table

        cols = ("n_requests",) + COLUMNS
        text = format_table(rows, cols) if args.format == "table" else format_csv(rows, cols)
        text = _commented(text, cfg)
    else:
        text = _commented(text, cfg)
    _emit(args, f"compare.{ {'table': 'txt'}.get(args.format, args.format) }", text)
    return 0


def cmd_optimize(args) -> int:
    sc = _scenario(args)
    U = sc.total_fast
    reqs = _demand(args, sc, args.seed)
    cfg = _config(args)
    results = []
    for r in range(args.restarts):
        seed = args.seed + r
        box = SimulationBlackbox(sc, reqs, policy=args.policy, master_seed=seed, replications=args.replications)
        res = so_optimize(box, sc.sites, U, args.budget, seed=seed, kernel=args.kernel, gamma=sc.fleet.rbf_gamma,
                          patience=args.patience, n_jobs=args.jobs)
        results.append(res)
        _write_aux(args, f"trace_restart{r}.csv", _commented(res.trace_csv(), cfg))
    best = min(results, key=lambda r: r.best_z)
    layout = ChargerLayout.from_vector(sc.sites, best.best_layout)
    out = {"config": cfg, "best_layout": dict(sorted(layout.counts.items())), "best_z": best.best_z,
           "restarts": [{"best_z": r.best_z, "evaluations": len(r.trace)} for r in results]}
    box = SimulationBlackbox(sc, reqs, policy=args.policy, master_seed=args.seed, replications=args.replications)
    if args.baseline == "kmeans":
        drops = np.array([r.destination for r in reqs])
        km = kmeans_layout(drops, sc.sites, U, args.seed)
        z_km = box(km.vector(sc.sites))
        out["kmeans"] = {"layout": dict(sorted(km.counts.items())), "z": z_km,
                         "relative_increase": (z_km - best.best_z) / best.best_z if best.best_z else None}
    if args.oracle == "enumerate":
        layouts = enumerate_layouts(sc.sites, U)
        zs = [box(u) for u in layouts]
        k = int(np.argmin(zs))
        out["oracle"] = {"n_layouts": len(layouts), "global_z": zs[k],
                         "global_layout": dict(sorted(ChargerLayout.from_vector(sc.sites, layouts[k]).counts.items())),
                         "gap": (best.best_z - zs[k]) / zs[k] if zs[k] else 0.0}
    _emit(args, "optimize.json", json.dumps(out, indent=2, sort_keys=True, default=float) + "\n")
    return 0


def cmd_emissions(args) -> int:
    km, fleet, kwh = args.km, args.fleet, args.kwh
    if args.from_report:
        p = Path(args.from_report)
        if not p.exists():
            raise UsageError(f"report not found: {args.from_report}")
        rep = _read_json(p)
        fleet = len(rep["vehicles"])
        km = rep["km_driven"] / fleet if fleet else 0.0
        kwh = rep["kwh_charged"]
    inp = EmissionsInput(km_per_vehicle_day=km, fleet_size=fleet, op_days_per_year=args.days,
                         gasoline_rate=args.gasoline_rate, kwh_per_day=kwh, grid_intensity=args.intensity)
    rep = emissions_report(inp)
    cfg = _config(args)
    if args.format == "json":
        text = json.dumps({"config": cfg, **rep}, indent=2, sort_keys=True) + "\n"
    else:
        rows = [{"annual_savings_t": rep["annual_savings_t"], "generation_t": rep["generation_t"]}]
        if args.format == "csv":
            text = "annual_savings_t,generation_t\n" + f"{rows[0]['annual_savings_t']:.1f},{rows[0]['generation_t']:.1f}\n"
        else:
            text = (f"annual CO2 savings: {rep['annual_savings_t']:.1f} t\n"
                    f"generation emissions: {rep['generation_t']:.1f} t\n")
        text = _commented(text, cfg)
    _emit(args, f"emissions.{ {'table': 'txt'}.get(args.format, args.format) }", text)
    return 0


# -- parser --------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common.add_argument("--out", default=None, help="output directory (default: stdout)")
    common.add_argument("--format", choices=["table", "csv", "json"], default="table")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="fastcharge", description="Electric dial-a-ride charging simulator and fast-charger placement.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scen(sp):
        sp.add_argument("--scenario", help=f"scenario JSON (relative paths also searched in ${SCENARIO_DIR_ENV})")
        sp.add_argument("--epoch-min", type=float, default=None, help="epoch length in minutes (default 30)")

    def dem(sp, n_default="1000"):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--demand", help="demand CSV")
        g.add_argument("--profile", help="demand profile JSON (default: built-in two-peak profile)")
        sp.add_argument("-n", default=n_default, help="number of generated requests")

    def lay(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--layout", help="layout JSON mapping site id to fast chargers")
        g.add_argument("--kmeans", action="store_true", help="place fast chargers by k-means on drop-offs")

    s = sub.add_parser("make-scenario", parents=[common], help="write a synthetic scenario")
    s.add_argument("--sites", type=int, default=30)
    s.add_argument("--depots", type=int, default=13)
    s.add_argument("--vehicles", type=int, default=50)
    s.add_argument("--slow-per-site", type=int, default=2)
    s.add_argument("--fast-cap", type=int, default=2)
    s.add_argument("--fast-total", type=int, default=10)
    s.set_defaults(func=cmd_make_scenario)

    s = sub.add_parser("generate-demand", parents=[common], help="write a synthetic demand CSV")
    s.add_argument("-n", type=int, required=True)
    s.add_argument("--profile", help="demand profile JSON (default: built-in two-peak profile)")
    scen(s)
    s.set_defaults(func=cmd_generate_demand)

    s = sub.add_parser("simulate", parents=[common], help="simulate one day")
    scen(s)
    dem(s)
    lay(s)
    s.add_argument("--policy", choices=POLICIES, default="ocp-a")
    s.add_argument("--event-log", help="write the per-event CSV log here")
    s.add_argument("--dump-assignments", help="directory for per-epoch assignment CSVs")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("compare", parents=[common], help="compare charging policies")
    scen(s)
    dem(s)
    lay(s)
    s.add_argument("--policies", help="comma-separated subset of " + ",".join(POLICIES))
    s.add_argument("--seeds", type=int, default=1, help="number of seeds (seed, seed+1, ...)")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("optimize", parents=[common], help="optimise fast-charger placement")
    scen(s)
    dem(s)
    s.add_argument("--policy", choices=POLICIES, default="ocp-a")
    s.add_argument("--budget", type=int, default=100)
    s.add_argument("--patience", type=int, default=15)
    s.add_argument("--kernel", choices=["cubic", "gaussian"], default="cubic")
    s.add_argument("--restarts", type=int, default=1)
    s.add_argument("--replications", type=int, default=1)
    s.add_argument("--baseline", choices=["none", "kmeans"], default="none")
    s.add_argument("--oracle", choices=["none", "enumerate"], default="none")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("emissions", parents=[common], help="annual CO2 estimate")
    s.add_argument("--km", type=float, default=0.0, help="km per vehicle per day")
    s.add_argument("--fleet", type=int, default=0)
    s.add_argument("--days", type=int, default=312)
    s.add_argument("--gasoline-rate", type=float, default=147.0, help="g CO2 per km")
    s.add_argument("--kwh", type=float, default=0.0, help="charged kWh per day")
    s.add_argument("--intensity", type=float, default=500.0, help="g CO2eq per kWh")
    s.add_argument("--from-report", help="take km and kWh from a simulate report.json")
    s.set_defaults(func=cmd_emissions)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if isinstance(getattr(args, "n", None), str) and args.command != "compare":
        try:
            args.n = int(args.n)
        except ValueError:
            parser.error(f"-n must be an integer, got {args.n!r}")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fastcharge: error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print("fastcharge: validation failed:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return 1
    except (ScenarioError, SimulationAbort) as exc:
        print(f"fastcharge: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
