"""Logic-based discrete steepest descent over the external-variable lattice.

The search starts from a feasible lattice point and alternates two moves:

* neighbour search: solve every unvisited, logically feasible neighbour and
  move to the best one if it beats the incumbent by more than ``eps``;
* line search: keep stepping in that winning direction while each new point
  is in bounds, feasible, unvisited and still improving.

It stops when a neighbour search finds nothing better.  Every point looked at
enters the visited set, so no subproblem is ever solved twice.  Infeasible
or failed subproblems score ``+inf``.

:func:`lattice_search` is the bare algorithm over any ``evaluate`` callable;
:func:`solve_ldsda` and :func:`solve_enumerate` wire it to the collocation
NLP.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .collocation import CollocationScheme, transcribe
from .errors import InfeasibleStart, OutOfBounds
from .external import ExternalMap, decode, format_point
from .model import DagdpModel, enumerate_feasible
from .simulate import initial_guess
from .solver import SolverSettings, SolveResult, solve

NEIGHBORHOODS = ("L2", "Linf")
_ALIASES = {"l2": "L2", "linf": "Linf", "l∞": "Linf", "inf": "Linf"}

LOCAL_OPTIMAL = "local_optimal"
OPTIMAL = "optimal"
TIME_LIMIT = "time_limit"
NO_FEASIBLE = "no_feasible_point"

TRACE_COLUMNS = ("iteration", "phase", "point", "feasible", "status", "objective", "wall_time")


def neighborhood_name(name: str) -> str:
    key = _ALIASES.get(str(name).lower())
    if key is None:
        raise ValueError(f"unknown neighbourhood {name!r}; use one of {NEIGHBORHOODS}")
    return key


@dataclass(frozen=True)
class SearchSettings:
    neighborhood: str = "L2"
    eps: float = 1e-6
    time_limit: float | None = None
    solver: SolverSettings = field(default_factory=SolverSettings)
    # subproblems of one neighbour round may be solved on this many threads
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "neighborhood", neighborhood_name(self.neighborhood))
        if not self.eps > 0:
            raise ValueError("improvement tolerance must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class TraceRecord:
    iteration: int
    phase: str        # initial | neighbor | line | enumerate
    point: tuple[int, ...]
    feasible: bool
    status: str       # solver status, or "skipped" for infeasible decodes
    objective: float
    wall_time: float

    def row(self) -> dict:
        return {
            "iteration": self.iteration,
            "phase": self.phase,
            "point": format_point(self.point),
            "feasible": int(self.feasible),
            "status": self.status,
            "objective": repr(self.objective),
            "wall_time": f"{self.wall_time:.3f}",
        }


@dataclass
class Evaluation:
    """What the search needs to know about one solved point."""

    status: str
    objective: float      # +inf unless the subproblem was solved
    payload: Any = None


@dataclass
class SearchOutcome:
    status: str
    point: tuple[int, ...] | None
    objective: float
    trace: list[TraceRecord]
    assignment: tuple[int, ...] | None = None
    result: SolveResult | None = None
    wall_time: float = 0.0
    # solve requests for a point already evaluated; zero by construction
    repeat_requests: int = 0

    @property
    def primal(self) -> np.ndarray | None:
        return None if self.result is None else self.result.x

    @property
    def n_solves(self) -> int:
        return sum(1 for r in self.trace if r.feasible)

    @property
    def solved_points(self) -> list[tuple[int, ...]]:
        return [r.point for r in self.trace if r.feasible]

    def write_trace(self, path) -> None:
        write_trace(self.trace, path)


def write_trace(trace: Sequence[TraceRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        w.writeheader()
        for r in trace:
            w.writerow(r.row())


def read_trace(path) -> list[TraceRecord]:
    with open(path, newline="") as fh:
        return [
            TraceRecord(int(r["iteration"]), r["phase"],
                        tuple(int(c) for c in r["point"].split(",")),
                        bool(int(r["feasible"])), r["status"], float(r["objective"]),
                        float(r["wall_time"]))
            for r in csv.DictReader(fh)
        ]


# ----------------------------------------------------------------------------
# lattice geometry


def directions(dimension: int, neighborhood: str) -> list[tuple[int, ...]]:
    """Unit steps ``+e_i, -e_i`` (L2) or all of ``{-1,0,1}^k`` but zero (Linf)."""
    if dimension < 1:
        raise ValueError("dimension must be at least 1")
    if neighborhood_name(neighborhood) == "L2":
        out = []
        for i in range(dimension):
            for sign in (1, -1):
                d = [0] * dimension
                d[i] = sign
                out.append(tuple(d))
        return out
    return [d for d in itertools.product((-1, 0, 1), repeat=dimension) if any(d)]


def _in_bounds(z, lower, upper) -> bool:
    return all(lo <= c <= hi for c, lo, hi in zip(z, lower, upper))


def _step(z, d):
    return tuple(a + b for a, b in zip(z, d))


def neighbors(z: Sequence[int], emap: ExternalMap, neighborhood: str, visited=()) -> list[tuple[int, ...]]:
    z = tuple(z)
    if not emap.contains(z):
        raise OutOfBounds(f"{format_point(z)} is outside the lattice")
    return _neighbors(z, emap.lower, emap.upper, directions(len(z), neighborhood), visited)


def _neighbors(z, lower, upper, dirs, visited):
    out = []
    for d in dirs:
        n = _step(z, d)
        if _in_bounds(n, lower, upper) and n not in visited:
            out.append(n)
    return out


# ----------------------------------------------------------------------------
# the search


class _Book:
    """Visited set, evaluation cache, trace and incumbent of one search."""

    def __init__(self, evaluate, feasible, settings, clock):
        self.evaluate = evaluate
        self.feasible = feasible
        self.settings = settings
        self.clock = clock
        self.visited: set[tuple[int, ...]] = set()
        self.cache: dict[tuple[int, ...], Evaluation] = {}
        self.trace: list[TraceRecord] = []
        self.best_point = None
        self.best = math.inf
        self.repeats = 0
        self.timed_out = False

    def out_of_time(self) -> bool:
        tl = self.settings.time_limit
        if tl is not None and self.clock() >= tl:
            self.timed_out = True
        return self.timed_out

    def run(self, points, iteration, phase) -> list[Evaluation | None]:
        """Evaluate ``points`` in order; infeasible ones are only recorded."""
        for z in points:
            if z in self.cache:
                self.repeats += 1
            self.visited.add(z)
        todo = [z for z in points if z not in self.cache and self.feasible(z)]
        if self.out_of_time():
            todo = []

        def timed(z):
            ev = self.evaluate(z)
            return ev, self.clock()

        if self.settings.workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.settings.workers) as pool:
                done = dict(zip(todo, pool.map(timed, todo)))
        else:
            done = {}
            for z in todo:
                if self.out_of_time():
                    break
                done[z] = timed(z)
        out = []
        for z in points:
            ev, stamp = done.get(z, (None, None))
            if ev is None:
                if self.feasible(z):
                    out.append(None)  # not reached before the time limit
                    continue
                self.trace.append(TraceRecord(iteration, phase, z, False, "skipped",
                                              math.inf, self.clock()))
                out.append(None)
                continue
            self.cache[z] = ev
            self.trace.append(TraceRecord(iteration, phase, z, True, ev.status,
                                          ev.objective, stamp))
            # first strictly better point wins, so ties keep trace order
            if ev.objective < self.best:
                self.best, self.best_point = ev.objective, z
            out.append(ev)
        return out


def lattice_search(
    evaluate: Callable[[tuple[int, ...]], Evaluation],
    z0: Sequence[int],
    lower: Sequence[int],
    upper: Sequence[int],
    settings: SearchSettings | None = None,
    feasible: Callable[[tuple[int, ...]], bool] | None = None,
) -> SearchOutcome:
    """Steepest descent on a box lattice with neighbour and line search moves."""
    settings = settings or SearchSettings()
    feasible = feasible or (lambda z: True)
    lower, upper, z0 = tuple(lower), tuple(upper), tuple(int(c) for c in z0)
    if not _in_bounds(z0, lower, upper) or len(z0) != len(lower):
        raise OutOfBounds(f"start {format_point(z0)} is outside the lattice")
    if not feasible(z0):
        raise InfeasibleStart(f"start {format_point(z0)} decodes to an infeasible configuration")

    t0 = time.perf_counter()
    book = _Book(evaluate, feasible, settings, lambda: time.perf_counter() - t0)
    dirs = directions(len(z0), settings.neighborhood)
    eps = settings.eps

    (first,) = book.run([z0], 0, "initial")
    here, here_val = z0, (first.objective if first else math.inf)
    iteration = 0
    while not book.timed_out:
        iteration += 1
        cand = _neighbors(here, lower, upper, dirs, book.visited)
        evals = book.run(cand, iteration, "neighbor")
        best_z, best_v = None, math.inf
        for z, ev in zip(cand, evals):
            if ev is not None and ev.objective < best_v:
                best_z, best_v = z, ev.objective
        if best_z is None or not best_v < here_val - eps:
            break
        d = tuple(b - a for a, b in zip(here, best_z))
        here, here_val = best_z, best_v
        while not book.timed_out:
            nxt = _step(here, d)
            if not _in_bounds(nxt, lower, upper) or nxt in book.visited:
                break
            (ev,) = book.run([nxt], iteration, "line")
            if ev is None or not ev.objective < here_val - eps:
                break
            here, here_val = nxt, ev.objective

    status = TIME_LIMIT if book.timed_out else (LOCAL_OPTIMAL if math.isfinite(here_val) else NO_FEASIBLE)
    # the walk only moves on strict improvement, so it sits on the trace minimum
    point = book.best_point
    payload = book.cache[point].payload if point is not None else None
    return SearchOutcome(status, point, book.best, book.trace,
                         result=payload, wall_time=book.clock(), repeat_requests=book.repeats)


# ----------------------------------------------------------------------------
# collocation subproblems


def solve_configuration(model: DagdpModel, assignment: Sequence[int], scheme: CollocationScheme,
                        settings: SolverSettings | None = None) -> SolveResult:
    """Transcribe and solve the NLP with the stage modes fixed to ``assignment``."""
    nlp = transcribe(model, assignment, scheme)
    return solve(nlp, initial_guess(model, assignment, scheme, nlp), settings)


def _evaluation(res: SolveResult) -> Evaluation:
    obj = res.objective if res.ok and np.isfinite(res.objective) else math.inf
    return Evaluation(res.status, obj, res)


def solve_ldsda(model: DagdpModel, emap: ExternalMap, scheme: CollocationScheme,
                z0: Sequence[int], settings: SearchSettings | None = None) -> SearchOutcome:
    settings = settings or SearchSettings()
    if emap.model is not model and emap.model != model:
        raise ValueError("the external map was built for a different model")

    def feasible(z):
        return decode(emap, z) is not None

    def evaluate(z):
        return _evaluation(solve_configuration(model, decode(emap, z), scheme, settings.solver))

    z0 = tuple(int(c) for c in z0)
    if not emap.contains(z0):
        raise OutOfBounds(f"start {format_point(z0)} is outside the lattice")
    out = lattice_search(evaluate, z0, emap.lower, emap.upper, settings, feasible)
    if out.point is not None:
        out.assignment = tuple(decode(emap, out.point))
    return out


def solve_enumerate(model: DagdpModel, scheme: CollocationScheme,
                    settings: SearchSettings | None = None) -> SearchOutcome:
    """Solve every logically feasible configuration and keep the best."""
    settings = settings or SearchSettings()
    configs = [tuple(a) for a in enumerate_feasible(model)]
    t0 = time.perf_counter()
    book = _Book(
        lambda a: _evaluation(solve_configuration(model, a, scheme, settings.solver)),
        lambda a: True, settings, lambda: time.perf_counter() - t0)
    book.run(configs, 0, "enumerate")
    if book.timed_out:
        status = TIME_LIMIT
    else:
        status = OPTIMAL if book.best_point is not None else NO_FEASIBLE
    point = book.best_point
    return SearchOutcome(
        status, point, book.best, book.trace, assignment=point,
        result=book.cache[point].payload if point is not None else None,
        wall_time=book.clock(), repeat_requests=book.repeats)
