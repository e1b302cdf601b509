"""Command-line entry point: ``sircontrol {simulate,solve,compare,sweep-param}``.

Exit codes: 0 success, 1 invalid scenario, 2 solver did not converge or
left its domain, 3 file I/O failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import scenarios
from .errors import DomainError, GridExitError, IntegrationError, ScenarioError, SweepConvergenceError
from .sir_core import PiecewiseConstantSchedule

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3


def _grid(text: str):
    try:
        nx, ny = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NX,NY, got {text!r}") from None
    return nx, ny


def _values(text: str):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", metavar="PATH", help="scenario file")
    src.add_argument("--preset", metavar="NAME", help="shipped preset name")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides the scenario)")
    common.add_argument("--grid", metavar="NX,NY", type=_grid, help="HJB grid size")
    common.add_argument("--dt", type=float, help="forward integration step in days")

    ap = argparse.ArgumentParser(prog="sircontrol", description="Optimal epidemic control solvers.")
    sub = ap.add_subparsers(dest="verb", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="forward run without optimization")
    sim.add_argument("--sigma", type=float, help="constant control (default sigma0)")
    solve = sub.add_parser("solve", parents=[common], help="run one solver plus the baseline")
    solve.add_argument("--solver", choices=scenarios.SOLVERS[:-1], help="defaults to the scenario's")
    sub.add_parser("compare", parents=[common], help="run every applicable solver")
    sw = sub.add_parser("sweep-param", parents=[common], help="1-D parameter study")
    sw.add_argument("--param", help="numeric scenario key to vary")
    sw.add_argument("--values", type=_values, help="comma-separated values")
    sw.add_argument("--solver", choices=scenarios.SOLVERS, help="solver for each run")
    sub.add_parser("presets", add_help=True, help="list shipped presets")
    return ap


def _config(args) -> scenarios.ScenarioConfig:
    cfg = scenarios.load_scenario(args.scenario or args.preset)
    over = {}
    if args.grid:
        over["grid_nx"], over["grid_ny"] = args.grid
    if args.dt is not None:
        over["dt"] = args.dt
    if getattr(args, "solver", None):
        over["solver"] = args.solver
    for k, v in over.items():
        cfg = cfg.with_value(k, v)
    if args.out:
        cfg = replace(cfg, output=Path(args.out))
    return cfg


def _simulate(cfg, sigma):
    p = cfg.params
    s = p.sigma0 if sigma is None else sigma
    t0 = time.perf_counter()
    sched = PiecewiseConstantSchedule.constant(s, p.sigma0, cfg.T)
    res = scenarios._metrics(
        scenarios.SolverResult("simulate"), scenarios._open_loop(cfg, sched), cfg, sched
    )
    res.wall_time = time.perf_counter() - t0
    rep = scenarios.RunReport(cfg, {"simulate": res})
    if cfg.output:
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        scenarios.emit_csv(res.trajectory, sched, out / f"{cfg.name}_simulate.csv")
        scenarios._write_text(out / f"{cfg.name}_report.txt", rep.to_text())
    return rep


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # argparse uses 2 for usage errors, which is reserved for solver failures here
        return EXIT_INVALID if e.code == 2 else e.code
    if args.verb == "presets":
        print("\n".join(scenarios.preset_names()))
        return EXIT_OK
    try:
        cfg = _config(args)
        if args.verb == "simulate":
            print(_simulate(cfg, args.sigma).to_text(), end="")
            return EXIT_OK
        if args.verb == "sweep-param":
            key = args.param or cfg.sweep_param
            results = scenarios.sweep_param(cfg, key, args.values)
            print(scenarios.format_sweep_table(key, results), end="")
            failed = any(rep.failed for _, rep in results)
            return EXIT_SOLVER if failed else EXIT_OK
        solvers = None if args.verb == "compare" else scenarios.planned_solvers(cfg)
        if args.verb == "compare":
            cfg = replace(cfg, solver="all")
        report = scenarios.run(cfg, solvers)
        print(report.to_text(), end="")
        return EXIT_SOLVER if report.failed else EXIT_OK
    except (ScenarioError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (SweepConvergenceError, GridExitError, IntegrationError) as e:
        print(f"solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
