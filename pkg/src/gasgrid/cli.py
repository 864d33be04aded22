"""Command-line entry point: ``gasgrid {simulate,compare,sweep,steady}``.

Exit codes: 0 success, 2 invalid scenario or arguments, 3 solver failure,
4 I/O failure. ``GASGRID_LOG`` sets the log level (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import runs
from .cases import case_path, list_cases
from .errors import GasGridError, ParseError, ValidationError
from .scenario import Scenario, parse_scenario, validate

log = logging.getLogger("gasgrid")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


def _load(arg: str) -> Scenario:
    p = Path(arg)
    if not p.exists() and arg in list_cases():
        p = case_path(arg)
    return parse_scenario(p)


def _apply_overrides(sc: Scenario, args) -> Scenario:
    if args.t_end is not None:
        sc.t_end = args.t_end
    if args.dx is not None:
        sc.gas.dx = args.dx
    if args.scheme is not None:
        sc.gas.scheme = args.scheme
    if args.atol is not None:
        sc.solver.atol = args.atol
    if args.rtol is not None:
        sc.solver.rtol = args.rtol
    if getattr(args, "oracle_dx", None) is not None:
        sc.output.oracle_dx = args.oracle_dx
    validate(sc)
    return sc


def parse_values(text: str) -> list[float]:
    """Comma list ``a,b,c`` or inclusive range ``start:stop:step``; empty text gives ``[]``."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        parts = [float(v) for v in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError("range must be start:stop:step with step > 0")
        start, stop, step = parts
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(max(n, 0))]
    return [float(v) for v in text.split(",") if v.strip()]


def _out_dir(args, sc: Scenario) -> Path:
    return Path(args.out if args.out is not None else sc.output.dir)


def cmd_simulate(args) -> int:
    sc = _apply_overrides(_load(args.scenario), args)
    out = _out_dir(args, sc)
    run = runs.run_simulate(sc, out)
    c = run.result.counters
    print(f"t_final={run.result.t_final:.6f} s  accepted={c.accepted}  rejected={c.rejected}  "
          f"lu={c.lu}  wall={run.result.wall_time:.2f} s")
    for hit in run.result.hits:
        print(f"  {hit.spec.kind.value:24s} t_cr={hit.t_cr:.6f}  {hit.spec.action.value}")
    print(f"wrote {out}/trajectory.csv, events.log, summary.json")
    return EXIT_OK


def cmd_compare(args) -> int:
    sc = _apply_overrides(_load(args.scenario), args)
    res = runs.run_compare(sc, oracle_dx=sc.output.oracle_dx, out_dir=_out_dir(args, sc))
    print(runs.format_rmse_table({sc.gas.scheme: res.rmse}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = _apply_overrides(_load(args.scenario), args)
    try:
        values = parse_values(args.values)
    except ValueError as exc:
        raise ValidationError([f"--values: {exc}"]) from None
    if args.param not in runs.SWEEP_PARAMETERS:
        raise ValidationError([f"--param must be one of {', '.join(runs.SWEEP_PARAMETERS)}"])
    out = _out_dir(args, sc)
    path = out / "sweep.csv"
    rows = runs.run_sweep(sc, args.param, values, jobs=args.jobs, out_path=path)
    for v, t, status in rows:
        print(f"{args.param}={v:g}  t_cr={t:.3f} s  {status}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_steady(args) -> int:
    sc = _apply_overrides(_load(args.scenario), args)
    out = _out_dir(args, sc)
    system, x = runs.run_steady(sc, out)
    for node, k in zip(system.gas.nodes, system.node_p):
        print(f"node{node.id}.p = {x[k] * 1e-6:.6f} MPa")
    print(f"wrote {out}/steady.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True,
                        help=f"scenario file, or a bundled case ({', '.join(list_cases())})")
    common.add_argument("--t-end", type=float, help="simulation end time [s]")
    common.add_argument("--dx", type=float, help="spatial step [m]")
    common.add_argument("--atol", type=float, help="absolute error tolerance")
    common.add_argument("--rtol", type=float, help="relative error tolerance")
    common.add_argument("--scheme", choices=("weno3", "kt"), help="spatial scheme")
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="gasgrid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="integrate a scenario")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("compare", parents=[common], help="RMSE against the characteristics oracle")
    p.add_argument("--oracle-dx", type=float, help="oracle spatial step [m]")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("sweep", parents=[common], help="critical time over a parameter grid")
    p.add_argument("--param", default="fault.distance", help=f"one of {', '.join(runs.SWEEP_PARAMETERS)}")
    p.add_argument("--values", default="", help="a,b,c or start:stop:step")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("steady", parents=[common], help="steady-state initialization only")
    p.set_defaults(func=cmd_steady)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("GASGRID_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        print(f"gasgrid: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except GasGridError as exc:
        print(f"gasgrid: solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"gasgrid: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
