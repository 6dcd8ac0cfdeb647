"""Command-line driver for the two benchmark problems.

Example::

    dyngdp --problem multi-stage --stages 9 --method ldsda-linf \\
        --reformulation transition --start 1,2 --out result.json --trace trace.csv

Writes a JSON result document and, with ``--trace``, one CSV row per lattice
point the search looked at.  Exit code 0 means the method terminated
normally, 2 means the time limit was hit and 1 means nothing feasible was
found or the input was rejected.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict

from . import __version__
from .benchmarks import METHODS, PROBLEMS, U_BOUNDS, X_BOUNDS, BenchmarkSpec, build_benchmark
from .collocation import CollocationScheme
from .errors import DyngdpError
from .external import build_map, decode, encode, format_point, parse_point
from .search import LOCAL_OPTIMAL, OPTIMAL, TIME_LIMIT, SearchSettings, solve_enumerate, solve_ldsda
from .solver import SolverSettings

EXIT_OK, EXIT_FAILED, EXIT_TIME_LIMIT = 0, 1, 2


def _number(v):
    # JSON has no infinity
    return v if isinstance(v, (int, str)) or v is None or math.isfinite(v) else None


def run(spec: BenchmarkSpec, out=None, trace=None, solver: SolverSettings | None = None,
        workers: int = 1) -> tuple[int, dict]:
    """Execute ``spec``; returns the exit code and the result document."""
    model = build_benchmark(spec)
    solver = solver or SolverSettings()
    settings = SearchSettings(
        neighborhood="Linf" if spec.method == "ldsda-linf" else "L2",
        time_limit=spec.time_limit, solver=solver, workers=workers)
    emap = build_map(model, spec.reformulation)

    if spec.method == "enumerate":
        outcome = solve_enumerate(model, spec.scheme, settings)
        point = None if outcome.assignment is None else encode(emap, outcome.assignment)
    else:
        outcome = solve_ldsda(model, emap, spec.scheme, spec.start, settings)
        point = outcome.point

    schedule = None if point is None else list(decode(emap, point))
    doc = {
        "problem": spec.problem,
        "stages": model.n_stages,
        "method": spec.method,
        "reformulation": spec.reformulation,
        "start": format_point(spec.start),
        "settings": {
            "finite_elements_per_stage": spec.scheme.n_fe,
            "collocation_points": spec.scheme.n_cp,
            "time_limit": spec.time_limit,
            "improvement_tolerance": settings.eps,
            "neighborhood": None if spec.method == "enumerate" else settings.neighborhood,
            "workers": workers,
            "solver": asdict(solver),
        },
        "bounds": {"x": list(X_BOUNDS), "u": list(U_BOUNDS)},
        "fixed": {"u(0)": 4.0} if spec.problem == "three-stage" else {},
        "lattice": {"lower": list(emap.lower), "upper": list(emap.upper)},
        "status": outcome.status,
        "point": None if point is None else list(point),
        "schedule": schedule,
        "objective": _number(outcome.objective),
        "subproblems": outcome.n_solves,
        "wall_time": outcome.wall_time,
        "solve": None if outcome.result is None else
            {k: _number(v) for k, v in outcome.result.to_dict().items()},
    }
    if out is not None:
        with open(out, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    if trace is not None:
        outcome.write_trace(trace)
    if outcome.status in (OPTIMAL, LOCAL_OPTIMAL):
        return EXIT_OK, doc
    return (EXIT_TIME_LIMIT if outcome.status == TIME_LIMIT else EXIT_FAILED), doc


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dyngdp", description=__doc__.split("\n\n")[0])
    p.add_argument("--problem", choices=PROBLEMS, default="three-stage")
    p.add_argument("--stages", type=int, default=9, help="stage count of the multi-stage problem")
    p.add_argument("--method", choices=METHODS, default="ldsda-l2")
    p.add_argument("--reformulation", choices=("ordinal", "transition"),
                   help="default: ordinal for three-stage, transition for multi-stage")
    p.add_argument("--start", type=parse_point, help='lattice start point, e.g. "1,2"')
    p.add_argument("--nfe", type=int, default=30, help="finite elements per stage")
    p.add_argument("--ncp", type=int, default=3, help="Radau collocation points per element")
    p.add_argument("--time-limit", type=float, help="seconds (default 900, or 3600 multi-stage)")
    p.add_argument("--out", help="result JSON path (default: stdout)")
    p.add_argument("--trace", help="trace CSV path")
    p.add_argument("--restarts", type=int, default=0, help="perturbed re-solves per subproblem")
    p.add_argument("--seed", type=int, default=0, help="seed for the restart perturbations")
    p.add_argument("--workers", type=int, default=1, help="threads per neighbour round")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        spec = BenchmarkSpec(
            problem=args.problem, stages=args.stages,
            scheme=CollocationScheme(args.nfe, args.ncp), method=args.method,
            reformulation=args.reformulation, start=args.start, time_limit=args.time_limit)
        code, doc = run(spec, args.out, args.trace,
                        SolverSettings(restarts=args.restarts, seed=args.seed), args.workers)
    except (DyngdpError, ValueError) as exc:
        print(f"dyngdp: error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    if args.out is None:
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
