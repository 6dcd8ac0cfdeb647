"""Classical RK4 integration of a mode schedule, and NLP initial guesses.

The integrator is deliberately independent of the collocation code: it only
shares the model's expressions, so it serves as an oracle for the
transcription as well as a warm start for the solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .collocation import CollocationScheme, transcribe
from .errors import InfeasibleConfiguration, NonFiniteState
from .expr import Tape
from .model import DagdpModel, is_feasible_configuration
from .nlp import DiscretizedNlp

BLOWUP = 1e12


@dataclass
class Trajectory:
    times: np.ndarray      # (n_samples,)
    states: np.ndarray     # (n_samples, n_states)
    integral: np.ndarray   # (n_samples,) running integral of the integrand (zeros if none)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _midpoint(lo: float, hi: float) -> float:
    if math.isfinite(lo) and math.isfinite(hi):
        return 0.5 * (lo + hi)
    if math.isfinite(lo):
        return max(lo, 0.0)
    if math.isfinite(hi):
        return min(hi, 0.0)
    return 0.0


class _Rhs:
    def __init__(self, model: DagdpModel, assignment):
        if model.algebraics:
            raise NotImplementedError("RK4 simulation does not handle algebraic variables")
        self.model = model
        self.ns = len(model.states)
        self.nu = len(model.controls)
        self.params = [_midpoint(p.lower, p.upper) for p in model.parameters]
        self.tapes = [[Tape(e) for e in model.disjunctions[s][m - 1].rhs]
                      for s, m in enumerate(assignment)]
        self.quad = Tape(model.integrand) if model.integrand is not None else None

    def __call__(self, stage, t, y, u):
        pt = list(y[: self.ns]) + list(u) + self.params + [t]
        out = [tp.evaluate(pt) for tp in self.tapes[stage]]
        out.append(self.quad.evaluate(pt) if self.quad is not None else 0.0)
        return np.array(out)


def _rk4(f, stage, t, y, u, h):
    k1 = f(stage, t, y, u)
    k2 = f(stage, t + h / 2, y + h / 2 * k1, u)
    k3 = f(stage, t + h / 2, y + h / 2 * k2, u)
    k4 = f(stage, t + h, y + h * k3, u)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _element_grid(model: DagdpModel, n_elements: int):
    S = model.n_stages
    if n_elements % S:
        raise ValueError("number of control elements must be a multiple of the stage count")
    nfe = n_elements // S
    times = np.asarray(model.stage_times, dtype=float)
    stage = np.repeat(np.arange(S), nfe)
    width = ((times[1:] - times[:-1]) / nfe)[stage]
    start = times[stage] + (np.arange(n_elements) % nfe) * width
    return stage, start, width


def _check(model, assignment):
    assignment = tuple(int(a) for a in assignment)
    if not is_feasible_configuration(model, assignment):
        raise InfeasibleConfiguration(f"assignment {assignment} violates the model logic")
    return assignment


def simulate(model: DagdpModel, assignment: Sequence[int], controls, steps_per_element: int = 10) -> Trajectory:
    """RK4 with piecewise-constant controls.

    ``controls`` has shape ``(n_elements, n_controls)``; ``n_elements`` must
    be a multiple of the stage count (elements are uniform within a stage).
    Samples include every element boundary.
    """
    assignment = _check(model, assignment)
    f = _Rhs(model, assignment)
    u = np.asarray(controls, dtype=float).reshape(-1, f.nu) if f.nu else np.asarray(controls, dtype=float)
    n_el = u.shape[0]
    stage, start, width = _element_grid(model, n_el)
    y = np.array([s.initial for s in model.states] + [0.0])
    times, samples = [float(model.stage_times[0])], [y.copy()]
    for e in range(n_el):
        h = width[e] / steps_per_element
        for i in range(steps_per_element):
            t = start[e] + i * h
            y = _rk4(f, stage[e], t, y, u[e], h)
            if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > BLOWUP:
                raise NonFiniteState(f"state blew up near t = {t + h:.4g}")
            times.append(start[e] + (i + 1) * h)
            samples.append(y.copy())
    arr = np.array(samples)
    return Trajectory(np.array(times), arr[:, : f.ns], arr[:, f.ns])


def simulate_nodes(model: DagdpModel, assignment, scheme: CollocationScheme, controls,
                   steps_per_element: int = 10) -> np.ndarray:
    """RK4 values (states plus running integral) at every collocation node.

    Returns shape ``(n_elements * n_cp + 1, n_states + 1)``.
    """
    from .collocation import radau_points

    f = _Rhs(model, assignment)
    u = np.asarray(controls, dtype=float).reshape(-1, f.nu) if f.nu else np.zeros((model.n_stages * scheme.n_fe, 0))
    stage, start, width = _element_grid(model, u.shape[0])
    tau = np.concatenate([[0.0], radau_points(scheme.n_cp)])
    y = np.array([s.initial for s in model.states] + [0.0])
    out = [y.copy()]
    for e in range(u.shape[0]):
        for k in range(1, len(tau)):
            span = (tau[k] - tau[k - 1]) * width[e]
            n = max(1, int(math.ceil(steps_per_element * (tau[k] - tau[k - 1]))))
            h = span / n
            t0 = start[e] + tau[k - 1] * width[e]
            for i in range(n):
                y = _rk4(f, stage[e], t0 + i * h, y, u[e], h)
                if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > BLOWUP:
                    raise NonFiniteState(f"state blew up near t = {t0 + (i + 1) * h:.4g}")
            out.append(y.copy())
    return np.array(out)


def default_controls(model: DagdpModel, n_elements: int) -> np.ndarray:
    u = np.array([[_midpoint(c.lower, c.upper) for c in model.controls]] * n_elements).reshape(n_elements, -1)
    for k, c in enumerate(model.controls):
        if c.fixed_initial is not None:
            u[0, k] = c.fixed_initial
    return u


def initial_guess(model: DagdpModel, assignment: Sequence[int], scheme: CollocationScheme,
                  nlp: DiscretizedNlp | None = None, steps_per_element: int = 4) -> np.ndarray:
    """Controls at their bound midpoints, states simulated and clipped."""
    assignment = _check(model, assignment)
    nlp = nlp or transcribe(model, assignment, scheme)
    lay = nlp.layout
    x = np.array([_midpoint(lo, hi) for lo, hi in zip(nlp.lower, nlp.upper)])
    u = default_controls(model, lay.n_elements)
    for k in range(len(model.controls)):
        x[lay.controls[k]] = u[:, k]
    if not model.algebraics:
        try:
            with np.errstate(all="raise"):
                nodes = simulate_nodes(model, assignment, scheme, u, steps_per_element)
        except (NonFiniteState, FloatingPointError, ArithmeticError):
            nodes = None
        if nodes is not None:
            for k in range(lay.states.shape[0]):
                x[lay.states[k]] = nodes[:, k]
            lay.set_running_integral(x, nodes[:, -1])
    return np.clip(x, nlp.lower, nlp.upper)
