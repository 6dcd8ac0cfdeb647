import math

import numpy as np
import pytest
from numpy.polynomial import legendre

from dyngdp.benchmarks import multi_stage_model, three_stage_model
from dyngdp.collocation import (
    CollocationScheme,
    collocation_equality_count,
    differentiation_matrix,
    radau_points,
    simulate_collocation,
    transcribe,
)
from dyngdp.errors import DuplicateNodes, InfeasibleConfiguration, UnsupportedOrder
from dyngdp.expr import var
from dyngdp.model import DagdpModel, Disjunct, StateVar, enumerate_feasible
from dyngdp.simulate import initial_guess, simulate
from dyngdp.solver import solve


def single_stage(rhs, x0=1.0, t_end=1.0, bounds=(-10.0, 10.0)):
    return DagdpModel((0.0, t_end), (StateVar("x", *bounds, x0),), (), ((Disjunct((rhs,)),),))


def radau_oracle(n):
    """Right Radau nodes: roots of P_n - P_{n-1} on [-1, 1], found by bisection."""
    c = np.zeros(n + 1)
    c[n], c[n - 1] = 1.0, -1.0
    f = lambda s: legendre.legval(s, c)
    grid = np.linspace(-1, 1, 2001)
    roots = []
    for a, b in zip(grid, grid[1:]):
        if f(a) == 0:
            roots.append(a)
        elif f(a) * f(b) < 0:
            for _ in range(200):
                mid = 0.5 * (a + b)
                a, b = (mid, b) if f(a) * f(mid) > 0 else (a, mid)
            roots.append(0.5 * (a + b))
    roots.append(1.0)
    return (np.array(sorted(set(np.round(roots, 14)))) + 1) / 2


def test_radau_points():
    assert radau_points(1).tolist() == [1.0]
    assert radau_points(2) == pytest.approx([1 / 3, 1.0], abs=1e-14)
    assert radau_points(3) == pytest.approx([0.155051, 0.644949, 1.0], abs=1e-6)
    for n in range(1, 6):
        pts = radau_points(n)
        assert pts[-1] == 1.0 and np.all(np.diff(pts) > 0) and pts[0] > 0
        assert pts == pytest.approx(radau_oracle(n), abs=1e-12)
    for bad in (0, 6):
        with pytest.raises(UnsupportedOrder):
            radau_points(bad)
    with pytest.raises(UnsupportedOrder):
        CollocationScheme(3, 7)


def test_differentiation_matrix():
    assert differentiation_matrix([1.0]).tolist() == [[-1.0], [1.0]]
    for n in range(1, 6):
        pts = radau_points(n)
        M = differentiation_matrix(pts)
        tau = np.concatenate([[0.0], pts])
        assert M.shape == (n + 1, n)
        assert np.abs(M.sum(axis=0)).max() < 1e-10
        assert np.abs(tau @ M - 1).max() < 1e-10
        # derivative of tau^n is exact at every point
        assert np.abs(tau**n @ M - n * pts ** (n - 1)).max() < 1e-9
    with pytest.raises(DuplicateNodes):
        differentiation_matrix([0.5, 0.5])


def test_three_stage_sizes_and_layout():
    m = three_stage_model()
    nlp = transcribe(m, (1, 2, 2), CollocationScheme(30, 3))
    # x and the quadrature state, 3 stages x 30 elements x 3 points
    assert collocation_equality_count(nlp) == 540
    assert nlp.m == 541  # plus the initial condition
    lay = nlp.layout
    assert lay.states.shape == (1, 271)
    assert lay.controls.shape == (1, 90)
    assert lay.node_times[0] == 0.0 and lay.node_times[-1] == 3.0
    # element starts alias the previous element's last Radau point
    starts = lay.states[0][:-1:3]
    assert len(set(starts)) == 90
    assert nlp.referenced().all()
    # the fixed first control
    c0 = lay.controls[0][0]
    assert nlp.lower[c0] == nlp.upper[c0] == 4.0
    assert np.all(nlp.lower[lay.states[0]] == 0.0) and np.all(nlp.upper[lay.states[0]] == 10.0)


def test_transcribe_rejects_infeasible_and_is_deterministic():
    m = three_stage_model()
    with pytest.raises(InfeasibleConfiguration):
        transcribe(m, (2, 1, 1), CollocationScheme(2, 2))
    a = transcribe(m, (1, 1, 2), CollocationScheme(3, 2))
    b = transcribe(m, (1, 1, 2), CollocationScheme(3, 2))
    assert a.var_names() == b.var_names()
    x = np.linspace(0.1, 1.0, a.n)
    assert np.array_equal(a.c(x), b.c(x))
    assert a.f(x) == b.f(x)


def test_multi_stage_time_symbol_uses_absolute_time():
    m = multi_stage_model(3)
    sc = CollocationScheme(2, 2)
    nlp = transcribe(m, (1, 2, 3), sc)
    assert collocation_equality_count(nlp) == 3 * 2 * 2 * 2
    # the third stage spans [2, 3]
    lay = nlp.layout
    assert lay.element_start.tolist() == [0.0, 0.5, 1.0, 1.5, 2.0, 2.5]
    t, X = simulate_collocation(m, (1, 2, 3), sc, np.zeros((6, 1)))
    ref = simulate(m, (1, 2, 3), np.zeros((6, 1)), steps_per_element=200)
    assert X[-1, 0] == pytest.approx(ref.final[0], abs=1e-3)


def test_constant_dynamics():
    m = single_stage(0 * var(0))
    sc = CollocationScheme(5, 3)
    t, X = simulate_collocation(m, (1,), sc, np.zeros((5, 0)))
    assert np.all(X[:, 0] == 1.0)
    nlp = transcribe(m, (1,), sc)
    x = initial_guess(m, (1,), sc, nlp)
    assert np.all(x[nlp.layout.states[0]] == 1.0)
    res = solve(nlp, x)
    assert res.ok
    assert np.abs(res.x[nlp.layout.states[0]] - 1.0).max() <= 1e-6


@pytest.mark.parametrize("ncp", [1, 2, 3, 4, 5])
def test_polynomial_exactness(ncp):
    c = 1.7
    m = single_stage(c * var(1) ** (ncp - 1) if ncp > 1 else c + 0 * var(1), x0=0.5, t_end=2.0,
                     bounds=(-100.0, 100.0))
    t, X = simulate_collocation(m, (1,), CollocationScheme(4, ncp), np.zeros((4, 0)))
    exact = 0.5 + c * t**ncp / ncp
    assert np.abs(X[:, 0] - exact).max() <= 1e-10


def test_exponential_decay():
    m = single_stage(-var(0))
    sc = CollocationScheme(10, 3)
    t, X = simulate_collocation(m, (1,), sc, np.zeros((10, 0)))
    assert X[-1, 0] == pytest.approx(math.exp(-1), abs=1e-6)
    nlp = transcribe(m, (1,), sc)
    res = solve(nlp, initial_guess(m, (1,), sc, nlp))
    assert res.ok
    assert res.x[nlp.layout.states[0][-1]] == pytest.approx(math.exp(-1), abs=1e-6)


def _controls(model, n_el):
    u = np.full((n_el, 1), 0.5)
    if model.controls[0].fixed_initial is not None:
        u[0, 0] = model.controls[0].fixed_initial
    return u


@pytest.mark.parametrize("model", [three_stage_model(), multi_stage_model(4)], ids=["three", "multi4"])
def test_collocation_matches_fine_rk4(model):
    sc = CollocationScheme(30, 3)
    n_el = model.n_stages * sc.n_fe
    u = _controls(model, n_el)
    for a in enumerate_feasible(model):
        t, X = simulate_collocation(model, a, sc, u)
        ref = simulate(model, a, u, steps_per_element=10 * sc.n_cp)
        ends = X[:: sc.n_cp]
        ref_ends = ref.states[:: 10 * sc.n_cp]
        assert np.abs(ends[:, 0] - ref_ends[:, 0]).max() <= 1e-3
        assert np.abs(ends[:, 1] - ref.integral[:: 10 * sc.n_cp]).max() <= 1e-3


def test_running_integral_round_trip():
    m = three_stage_model()
    sc = CollocationScheme(4, 3)
    nlp = transcribe(m, (1, 1, 1), sc)
    lay = nlp.layout
    x = np.zeros(nlp.n)
    values = np.cumsum(np.arange(len(lay.node_times), dtype=float))
    values -= values[0]
    lay.set_running_integral(x, values)
    assert lay.running_integral(x) == pytest.approx(values)


def test_dump(tmp_path):
    nlp = transcribe(three_stage_model(), (1, 1, 2), CollocationScheme(2, 2))
    path = tmp_path / "nlp.txt"
    nlp.dump(path)
    text = path.read_text()
    assert "x[" in text and "objective" in text.lower()
