import math

import numpy as np
import pytest

from dyngdp.benchmarks import multi_stage_model, three_stage_model
from dyngdp.collocation import CollocationScheme, simulate_collocation, transcribe
from dyngdp.errors import InfeasibleConfiguration, NonFiniteState
from dyngdp.expr import var
from dyngdp.model import DagdpModel, Disjunct, StateVar, enumerate_feasible
from dyngdp.nlp import DiscretizedNlp
from dyngdp.simulate import initial_guess, simulate
from dyngdp.solver import (
    INFEASIBLE,
    OPTIMAL,
    ROUNDOFF,
    SolverSettings,
    projected_gradient_norm,
    solve,
)

x0, x1 = var(0), var(1)


def single_stage(rhs, x_init=1.0, t_end=1.0, bounds=(-10.0, 10.0)):
    return DagdpModel((0.0, t_end), (StateVar("x", *bounds, x_init),), (), ((Disjunct((rhs,)),),))


def assert_optimal_contract(res, settings=SolverSettings()):
    assert res.status == OPTIMAL
    assert res.max_violation <= settings.feas_tol
    assert res.projected_gradient <= settings.opt_tol


def assert_monotone(res):
    assert res.merit_history
    for values in res.merit_history:
        for a, b in zip(values, values[1:]):
            assert b <= a + ROUNDOFF * max(1.0, abs(a))


def test_bound_active_minimum():
    nlp = DiscretizedNlp.from_expressions([0.0], [1.0], (x0 - 2) ** 2)
    res = solve(nlp, [0.3])
    assert_optimal_contract(res)
    assert res.x[0] == pytest.approx(1.0)
    assert res.objective == pytest.approx(1.0)


@pytest.mark.parametrize("hessian", ["exact", "lbfgs"])
def test_equality_projection(hessian):
    nlp = DiscretizedNlp.from_expressions([-10.0], [10.0], x0**2, [x0 - 3])
    settings = SolverSettings(hessian=hessian, record_history=True)
    res = solve(nlp, [0.0], settings)
    assert_optimal_contract(res)
    assert res.objective == pytest.approx(9.0, abs=1e-5)
    assert abs(res.x[0] - 3) <= 1e-6
    assert_monotone(res)


def test_two_variable_problem_with_active_bound():
    # min (x-1)^2 + (y-2)^2  s.t.  x + y = 1, y <= 1
    nlp = DiscretizedNlp.from_expressions([-5.0, -5.0], [5.0, 1.0], (x0 - 1) ** 2 + (x1 - 2) ** 2, [x0 + x1 - 1])
    res = solve(nlp, [0.0, 0.0])
    assert_optimal_contract(res)
    assert res.x == pytest.approx([0.0, 1.0], abs=1e-6)


def test_infeasible_problem():
    nlp = DiscretizedNlp.from_expressions([0.0], [1.0], x0**2, [x0 - 3])
    res = solve(nlp, [0.5])
    assert res.status == INFEASIBLE
    assert res.max_violation > 1e-4


def test_initial_point_is_projected_and_checked():
    nlp = DiscretizedNlp.from_expressions([0.0], [1.0], (x0 - 2) ** 2)
    assert solve(nlp, [7.0]).x[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        solve(nlp, [0.0, 1.0])


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(feas_tol=0)
    with pytest.raises(ValueError):
        SolverSettings(mu_growth=1.0)
    with pytest.raises(ValueError):
        SolverSettings(hessian="bfgs")


def test_projected_gradient_norm():
    x = np.array([0.0, 0.5, 1.0])
    g = np.array([1.0, -0.2, -3.0])
    # first and last components push against their bounds
    assert projected_gradient_norm(x, g, np.zeros(3), np.ones(3)) == pytest.approx(0.2)


@pytest.fixture(scope="module")
def three_stage_solves():
    m = three_stage_model()
    sc = CollocationScheme(30, 3)
    settings = SolverSettings(record_history=True)
    out = {}
    for a in enumerate_feasible(m):
        nlp = transcribe(m, a, sc)
        out[tuple(a)] = (nlp, solve(nlp, initial_guess(m, a, sc, nlp), settings))
    return out


def test_three_stage_best_configuration(three_stage_solves):
    nlp, res = three_stage_solves[(1, 2, 2)]
    assert_optimal_contract(res)
    assert res.objective == pytest.approx(-12.74, abs=0.05)
    best = min(three_stage_solves, key=lambda a: three_stage_solves[a][1].objective)
    assert best == (1, 2, 2)


def test_three_stage_results_satisfy_contract(three_stage_solves):
    for nlp, res in three_stage_solves.values():
        assert_optimal_contract(res)
        # recompute from the primal vector rather than trusting the fields
        assert np.abs(nlp.c(res.x)).max() <= 1e-6
        assert np.all(res.x >= nlp.lower) and np.all(res.x <= nlp.upper)
        assert nlp.f(res.x) == res.objective
        assert_monotone(res)


def test_solve_is_deterministic():
    m = three_stage_model()
    sc = CollocationScheme(6, 3)
    nlp = transcribe(m, (1, 1, 2), sc)
    x = initial_guess(m, (1, 1, 2), sc, nlp)
    a, b = solve(nlp, x), solve(nlp, x)
    assert a.status == b.status
    assert np.array_equal(a.x, b.x)
    assert a.objective == b.objective


def test_restarts_return_an_optimal_result():
    m = three_stage_model()
    sc = CollocationScheme(6, 3)
    nlp = transcribe(m, (1, 2, 2), sc)
    x = initial_guess(m, (1, 2, 2), sc, nlp)
    plain = solve(nlp, x)
    more = solve(nlp, x, SolverSettings(restarts=2, seed=3))
    assert more.ok
    assert more.objective <= plain.objective + 1e-9


# ----------------------------------------------------------------------------
# RK4 simulation and initial guesses


def test_simulate_constant_and_decay():
    traj = simulate(single_stage(0 * x0), (1,), np.zeros((1, 0)), steps_per_element=7)
    assert np.all(traj.states == 1.0)
    traj = simulate(single_stage(-x0), (1,), np.zeros((1, 0)), steps_per_element=100)
    assert traj.final[0] == pytest.approx(math.exp(-1), abs=1e-9)
    assert len(traj.times) == 101 and traj.times[-1] == pytest.approx(1.0)


def test_simulate_blowup_and_logic():
    with pytest.raises(NonFiniteState):
        simulate(single_stage(x0**2, t_end=3.0, bounds=(-1e3, 1e3)), (1,), np.zeros((3, 0)))
    with pytest.raises(InfeasibleConfiguration):
        simulate(three_stage_model(), (2, 2, 2), np.zeros((3, 1)))


def test_rk4_matches_collocation_on_three_stage():
    m = three_stage_model()
    sc = CollocationScheme(30, 3)
    u = np.zeros((90, 1))
    t, X = simulate_collocation(m, (1, 1, 1), sc, u)
    ref = simulate(m, (1, 1, 1), u, steps_per_element=30)
    assert np.abs(X[::3, 0] - ref.states[::30, 0]).max() <= 1e-3


@pytest.mark.parametrize("model,assignment", [
    (three_stage_model(), (1, 2, 2)),
    (multi_stage_model(4), (1, 2, 3, 3)),
])
def test_rk4_order(model, assignment):
    n_el = model.n_stages * 4
    u = np.linspace(-1, 1, n_el)[:, None]
    finals = [simulate(model, assignment, u, steps_per_element=n).final[0] for n in (2, 4, 8)]
    ratio = (finals[0] - finals[1]) / (finals[1] - finals[2])
    assert 12 <= ratio <= 20


def test_initial_guess():
    m = single_stage(0 * x0)
    sc = CollocationScheme(3, 2)
    nlp = transcribe(m, (1,), sc)
    assert np.all(initial_guess(m, (1,), sc, nlp)[nlp.layout.states[0]] == 1.0)
    # simulated x reaches 21 but the bound is 10
    m = single_stage(20 + 0 * x0, bounds=(0.0, 10.0))
    nlp = transcribe(m, (1,), sc)
    xs = initial_guess(m, (1,), sc, nlp)[nlp.layout.states[0]]
    assert xs.max() == 10.0 and xs[0] == 1.0
    # blow-up falls back to bound midpoints
    m = single_stage(x0**2, t_end=3.0, bounds=(-4.0, 8.0))
    nlp = transcribe(m, (1,), sc)
    xs = initial_guess(m, (1,), sc, nlp)[nlp.layout.states[0]]
    assert np.all(np.isfinite(xs)) and np.all((xs >= -4) & (xs <= 8))


def test_initial_guess_multi_stage_within_bounds():
    m = multi_stage_model(5)
    sc = CollocationScheme(30, 3)
    for a in enumerate_feasible(m):
        nlp = transcribe(m, a, sc)
        x = initial_guess(m, a, sc, nlp)
        assert np.all(np.isfinite(x))
        assert np.all(x >= nlp.lower) and np.all(x <= nlp.upper)
