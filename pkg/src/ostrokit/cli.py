"""Command line front door: derive, simulate, verify.

Exit codes: 0 success / all checks passed, 1 a check or solver failed,
2 input error (bad file, schema violation, incompatible route).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

from .integrate import trajectory_csv
from .lagrangian import DegeneracyError, ProblemError
from .pontryagin import RegularityError
from .problemfile import SchemaError, load_problem
from .solvers import ConvergenceError
from .verify import (
    ROUTES,
    derive_report,
    render_text,
    report_as_dict,
    run_route,
    run_verification,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ostrokit",
        description=(
            "Derive, simulate, and cross-verify higher-order and "
            "constrained variational problems."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("derive", help="print the symbolic derivations")
    p.add_argument("file", help="problem file (JSON)")

    p = sub.add_parser("simulate", help="integrate one route and export CSV")
    p.add_argument("file", help="problem file (JSON)")
    p.add_argument("--route", required=True, choices=ROUTES)
    p.add_argument("--out", help="CSV output path (default: stdout)")
    _add_run_overrides(p)

    p = sub.add_parser("verify", help="run all routes and cross-checks")
    p.add_argument("file", help="problem file (JSON)")
    p.add_argument("--json", dest="json_path", help="also write the report as JSON")
    _add_run_overrides(p)
    return parser


def _add_run_overrides(p: argparse.ArgumentParser):
    p.add_argument("--dt", type=float, help="override the fixed step size")
    p.add_argument("--t1", type=float, help="override the final time")
    p.add_argument("--method", choices=("rk4", "rk45"), help="override the integrator")
    p.add_argument("--plots", metavar="DIR", help="also render PNG figures into DIR")


def main(argv: Optional[list] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        spec = load_problem(args.file)
    except SchemaError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    try:
        if args.command == "derive":
            print(render_text(derive_report(spec)), end="")
            return 0

        run = spec.run.overridden(t1=args.t1, dt=args.dt, method=args.method)

        if args.command == "simulate":
            return _cmd_simulate(spec, args, run)
        return _cmd_verify(spec, args, run)
    except BrokenPipeError:
        # downstream closed the pipe (e.g. | head); exit quietly, and keep
        # the interpreter's shutdown flush away from the dead descriptor
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 1


def _cmd_simulate(spec, args, run) -> int:
    try:
        traj = run_route(spec, args.route, run)
    except SchemaError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (DegeneracyError, RegularityError, ConvergenceError, ProblemError) as err:
        print(f"error: route {args.route} failed: {err}", file=sys.stderr)
        return 1
    csv_text = trajectory_csv(traj)
    if args.out:
        Path(args.out).write_text(csv_text)
        print(f"wrote {args.out} ({traj.samples} samples, {traj.dimension} columns)")
    else:
        print(csv_text, end="")
    if args.plots:
        _emit_figures({args.route: traj}, args.plots, spec.name)
    return 0


def _cmd_verify(spec, args, run) -> int:
    trajectories = {}
    try:
        report = run_verification(spec, run, trajectories=trajectories)
    except SchemaError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(render_text(report), end="")
    if args.json_path:
        payload = json.dumps(report_as_dict(report), indent=2) + "\n"
        Path(args.json_path).write_text(payload)
    if args.plots and trajectories:
        _emit_figures(trajectories, args.plots, spec.name)
    return 0 if report.passed else 1


def _emit_figures(trajectories, outdir, name):
    from .figures import render_figures

    for path in render_figures(trajectories, outdir, name):
        print(f"figure {path}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
