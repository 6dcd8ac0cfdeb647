import itertools
import math
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyngdp.benchmarks import three_stage_model
from dyngdp.collocation import CollocationScheme
from dyngdp.errors import InfeasibleStart, OutOfBounds
from dyngdp.expr import var
from dyngdp.external import build_map
from dyngdp.model import DagdpModel, Disjunct, StateVar
from dyngdp.search import (
    LOCAL_OPTIMAL,
    TIME_LIMIT,
    Evaluation,
    SearchSettings,
    directions,
    lattice_search,
    neighbors,
    read_trace,
    solve_enumerate,
    solve_ldsda,
)


class Stub:
    """Counts calls; objective from a plain function of the point."""

    def __init__(self, fn, delay=0.0):
        self.fn = fn
        self.calls = []
        self.delay = delay
        self.lock = threading.Lock()

    def __call__(self, z):
        with self.lock:
            self.calls.append(z)
        if self.delay:
            time.sleep(self.delay)
        v = self.fn(z)
        return Evaluation("optimal" if math.isfinite(v) else "infeasible", v)


def box(n, k):
    return (1,) * n, (k,) * n


def test_directions():
    assert directions(2, "L2") == [(1, 0), (-1, 0), (0, 1), (0, -1)]
    assert len(directions(2, "Linf")) == 8
    assert len(directions(3, "Linf")) == 26
    assert (0, 0) not in directions(2, "Linf")
    assert directions(1, "Linf") == [(-1,), (1,)]
    with pytest.raises(ValueError):
        directions(0, "L2")
    with pytest.raises(ValueError):
        directions(2, "L1")


def test_neighbors():
    emap = build_map(_two_by_three(), "ordinal")
    assert emap.upper == (3, 3)
    assert sorted(neighbors((1, 1), emap, "L2")) == [(1, 2), (2, 1)]
    assert neighbors((2, 2), emap, "L2", {(1, 2)}) == [(3, 2), (2, 3), (2, 1)]
    assert len(neighbors((2, 2), emap, "Linf")) == 8
    with pytest.raises(OutOfBounds):
        neighbors((4, 1), emap, "L2")


def _two_by_three():
    x = var(0)
    d = Disjunct((-x,))
    return DagdpModel((0.0, 1.0, 2.0), (StateVar("x", 0, 2, 1.0),), (), ((d, d, d), (d, d, d)))


def test_settings_validation():
    assert SearchSettings("linf").neighborhood == "Linf"
    assert SearchSettings("L∞").neighborhood == "Linf"
    with pytest.raises(ValueError):
        SearchSettings(eps=0)
    with pytest.raises(ValueError):
        SearchSettings("L1")


def test_one_point_lattice():
    stub = Stub(lambda z: 5.0)
    out = lattice_search(stub, (1,), (1,), (1,))
    assert out.point == (1,) and out.objective == 5.0
    assert stub.calls == [(1,)]
    assert out.status == LOCAL_OPTIMAL


def test_infeasible_start_and_bounds():
    with pytest.raises(InfeasibleStart):
        lattice_search(Stub(lambda z: 0.0), (1, 1), (1, 1), (3, 3), feasible=lambda z: z != (1, 1))
    with pytest.raises(OutOfBounds):
        lattice_search(Stub(lambda z: 0.0), (0, 1), (1, 1), (3, 3))


def test_path_neighbor_then_line_search():
    # valley along the second coordinate with minimum at (1, 6)
    f = lambda z: (z[0] - 1) ** 2 + (z[1] - 6) ** 2
    stub = Stub(f)
    out = lattice_search(stub, (1, 2), (1, 1), (9, 9), SearchSettings("L2"))
    assert out.point == (1, 6)
    phases = [(r.phase, r.point) for r in out.trace]
    assert phases[:4] == [("initial", (1, 2)), ("neighbor", (2, 2)), ("neighbor", (1, 3)), ("neighbor", (1, 1))]
    assert [p for ph, p in phases if ph == "line"] == [(1, 4), (1, 5), (1, 6), (1, 7)]
    assert {r.iteration for r in out.trace if r.phase == "neighbor"} == {1, 2}


def test_infeasible_points_are_skipped_without_solving():
    blocked = {(2, 1), (1, 2)}
    stub = Stub(lambda z: sum(z))
    out = lattice_search(stub, (2, 2), (1, 1), (3, 3), feasible=lambda z: z not in blocked)
    assert not blocked & set(stub.calls)
    skipped = [r for r in out.trace if not r.feasible]
    assert {r.point for r in skipped} == blocked
    assert all(r.status == "skipped" and r.objective == math.inf for r in skipped)
    assert out.point == (2, 2)


def test_failed_subproblems_never_become_incumbent():
    f = lambda z: math.inf if z == (1, 1) else float(z[0] + z[1])
    out = lattice_search(Stub(f), (3, 3), (1, 1), (3, 3), SearchSettings("Linf"))
    assert out.point in {(1, 2), (2, 1)}
    assert out.objective == 3.0


def test_strict_improvement_and_tie_break():
    # plateau: no neighbor improves by more than eps, so the search stops at once
    out = lattice_search(Stub(lambda z: 1.0 - 1e-8 * z[0]), (2, 2), (1, 1), (3, 3), SearchSettings(eps=1e-6))
    assert out.n_solves == 5
    assert {r.phase for r in out.trace} == {"initial", "neighbor"}
    # two equally good neighbors: the first in direction order wins
    f = lambda z: 0.0 if z in {(3, 2), (2, 3)} else 1.0
    out = lattice_search(Stub(f), (2, 2), (1, 1), (3, 3), SearchSettings("L2"))
    assert [r.point for r in out.trace if r.phase == "neighbor"][0] == (3, 2)
    assert out.point == (3, 2)


def test_time_limit_returns_best_so_far():
    stub = Stub(lambda z: -float(z[0]), delay=0.05)
    out = lattice_search(stub, (1,), (1,), (100,), SearchSettings(time_limit=0.2))
    assert out.status == TIME_LIMIT
    assert 1 <= len(stub.calls) < 100
    assert out.objective == min(r.objective for r in out.trace)


def _search_all(f, lower, upper, nb, workers=1, start=None):
    stub = Stub(f)
    out = lattice_search(stub, start or lower, lower, upper, SearchSettings(nb, workers=workers))
    return stub, out


# synthetic separable convex lattice functions
convex_fns = st.lists(
    st.tuples(st.integers(1, 7), st.floats(0.1, 5.0), st.floats(-1.0, 1.0)),
    min_size=1, max_size=3,
)


@settings(max_examples=60, deadline=None)
@given(convex_fns, st.data())
def test_reaches_global_minimum_on_separable_convex(terms, data):
    def f(z):
        return sum(w * (c - m) ** 2 + abs(s) * abs(c - m) for c, (m, w, s) in zip(z, terms))

    n = len(terms)
    lower, upper = box(n, 7)
    start = tuple(data.draw(st.integers(1, 7)) for _ in range(n))
    best = min(f(z) for z in itertools.product(range(1, 8), repeat=n))
    for nb in ("L2", "Linf"):
        stub, out = _search_all(f, lower, upper, nb, start=start)
        assert out.objective == pytest.approx(best)
        # no double solves, terminates within the lattice size
        assert len(stub.calls) == len(set(stub.calls)) == out.n_solves
        assert out.repeat_requests == 0
        assert out.n_solves <= 7**n
        # incumbent is the trace minimum
        assert out.objective == min(r.objective for r in out.trace if r.feasible)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=16, max_size=16), st.sampled_from(["L2", "Linf"]))
def test_arbitrary_landscapes_terminate_consistently(values, nb):
    table = dict(zip(itertools.product(range(1, 5), repeat=2), values))
    stub, out = _search_all(table.__getitem__, (1, 1), (4, 4), nb)
    assert len(stub.calls) == len(set(stub.calls)) <= 16
    assert out.objective == min(r.objective for r in out.trace if r.feasible)
    # the terminal point has no neighbor better by more than eps
    for d in directions(2, nb):
        n = (out.point[0] + d[0], out.point[1] + d[1])
        if n in table and n in set(stub.calls):
            assert table[n] >= out.objective - 1e-6


def test_deterministic_across_runs_and_schedules():
    rng = np.random.default_rng(7)
    table = {z: float(rng.normal()) for z in itertools.product(range(1, 6), repeat=3)}

    def jittered(z):
        time.sleep(float(rng.uniform(0, 0.002)))
        return table[z]

    runs = []
    for workers in (1, 1, 4, 4):
        stub, out = _search_all(jittered, (1, 1, 1), (5, 5, 5), "Linf", workers=workers, start=(3, 3, 3))
        runs.append([(r.iteration, r.phase, r.point, r.objective) for r in out.trace])
    assert all(r == runs[0] for r in runs)


def test_trace_round_trip(tmp_path):
    f = lambda z: (z[0] - 2) ** 2 + (z[1] - 3) ** 2
    _, out = _search_all(f, (1, 1), (4, 4), "L2")
    path = tmp_path / "trace.csv"
    out.write_trace(path)
    header = path.read_text().splitlines()[0]
    assert header == "iteration,phase,point,feasible,status,objective,wall_time"
    back = read_trace(path)
    assert [(r.iteration, r.phase, r.point, r.feasible, r.objective) for r in back] == \
        [(r.iteration, r.phase, r.point, r.feasible, r.objective) for r in out.trace]
    times = [r.wall_time for r in back]
    assert times == sorted(times)


# ----------------------------------------------------------------------------
# real subproblems on a coarse mesh


def test_ldsda_and_enumeration_on_coarse_three_stage():
    m = three_stage_model()
    sc = CollocationScheme(5, 2)
    enum = solve_enumerate(m, sc)
    assert enum.n_solves == 3 and enum.status == "optimal"
    emap = build_map(m, "ordinal")
    for nb in ("L2", "Linf"):
        out = solve_ldsda(m, emap, sc, (1, 1, 1), SearchSettings(nb))
        assert out.objective == pytest.approx(enum.objective, rel=1e-6)
        assert out.assignment == enum.assignment
        assert out.primal is not None and len(out.primal) == out.result.x.size
    with pytest.raises(InfeasibleStart):
        solve_ldsda(m, emap, sc, (2, 1, 1))


def test_enumerate_without_logic():
    x = var(0)
    u = var(1)
    from dyngdp.model import ControlVar

    m = DagdpModel((0.0, 1.0), (StateVar("x", -5, 5, 1.0),), (ControlVar("u", -1, 1),),
                   ((Disjunct((-x + u,)), Disjunct((x + u,))),), integrand=x**2)
    out = solve_enumerate(m, CollocationScheme(4, 2))
    assert out.n_solves == 2
    assert out.assignment == (1,)
