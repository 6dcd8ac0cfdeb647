"""Radau collocation on finite elements for a fixed mode schedule.

The horizon of every stage is split into ``n_fe`` equal elements.  Inside an
element the state is the Lagrange interpolant through the element start
(tau = 0) and the Radau points tau_1 < ... < tau_ncp = 1; the last point is
shared with the start of the next element, so continuity holds by
construction and no separate continuity rows are generated.  Controls are
piecewise constant, one value per element.

An integral objective is carried by quadrature variables: in each element,
the integral of the integrand from the element start up to every Radau point,
collocated like a state that restarts from zero.  The objective is the sum of
the element totals.  Restarting keeps these variables small; a single running
integral grows to hundreds on the benchmarks and its rounding would then
dominate the penalty gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse.linalg as spla
from numpy.polynomial import legendre

from .errors import DuplicateNodes, InfeasibleConfiguration, UnsupportedOrder
from .expr import const, var
from .model import DagdpModel, is_feasible_configuration
from .nlp import ConstraintBlock, DiscretizedNlp, VarInfo

MAX_NCP = 5


@dataclass(frozen=True)
class CollocationScheme:
    n_fe: int = 30
    n_cp: int = 3

    def __post_init__(self):
        if self.n_fe < 1:
            raise ValueError("need at least one finite element per stage")
        if not 1 <= self.n_cp <= MAX_NCP:
            raise UnsupportedOrder(f"n_cp must be in 1..{MAX_NCP}")


def radau_points(n_cp: int) -> np.ndarray:
    """Right Radau points on (0, 1]: roots of P_n(2t-1) - P_{n-1}(2t-1)."""
    if not 1 <= n_cp <= MAX_NCP:
        raise UnsupportedOrder(f"n_cp must be in 1..{MAX_NCP}, got {n_cp}")
    coef = np.zeros(n_cp + 1)
    coef[n_cp] = 1.0
    coef[n_cp - 1] = -1.0
    roots = np.sort(legendre.legroots(coef).real)
    deriv = legendre.legder(coef)
    # Newton polish; companion-matrix roots lose a few digits
    for _ in range(3):
        roots = roots - legendre.legval(roots, coef) / legendre.legval(roots, deriv)
    pts = (roots + 1.0) / 2.0
    pts[-1] = 1.0
    return pts


def differentiation_matrix(points: Sequence[float]) -> np.ndarray:
    """``M[j, k]`` = derivative of the j-th Lagrange basis polynomial over
    ``{0} + points``, evaluated at ``points[k]``.  Shape ``(n+1, n)``."""
    nodes = np.concatenate([[0.0], np.asarray(points, dtype=float)])
    n = len(nodes)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(np.abs(diff) < 1e-14):
        raise DuplicateNodes("collocation nodes must be distinct")
    w = 1.0 / np.prod(diff, axis=1)
    D = np.empty((n, n))  # D[k, j] = l_j'(tau_k)
    for k in range(n):
        for j in range(n):
            if j != k:
                D[k, j] = (w[j] / w[k]) / (nodes[k] - nodes[j])
        D[k, k] = sum(1.0 / (nodes[k] - nodes[m]) for m in range(n) if m != k)
    return D[1:, :].T.copy()


@dataclass
class Layout:
    """Where each modelled quantity lives in the flat vector."""

    scheme: CollocationScheme
    assignment: tuple[int, ...]
    points: np.ndarray          # Radau points
    element_start: np.ndarray   # (E,) absolute start time per element
    element_width: np.ndarray   # (E,)
    element_stage: np.ndarray   # (E,) 0-based stage
    node_times: np.ndarray      # (E*ncp+1,)
    states: np.ndarray          # (n_states, E*ncp+1) flat indices
    quadrature: np.ndarray      # (E, ncp) integral from element start, or (0, ncp)
    controls: np.ndarray        # (n_controls, E)
    algebraics: np.ndarray      # (n_alg, E, ncp)
    parameters: np.ndarray      # (n_par,)
    has_quadrature: bool

    @property
    def n_elements(self) -> int:
        return len(self.element_start)

    def state_trajectory(self, x: np.ndarray, k: int = 0) -> np.ndarray:
        return x[self.states[k]]

    def control_profile(self, x: np.ndarray, k: int = 0) -> np.ndarray:
        return x[self.controls[k]]

    def running_integral(self, x: np.ndarray) -> np.ndarray:
        """Integral of the integrand from the first node to every node."""
        if not self.has_quadrature:
            return np.zeros(len(self.node_times))
        q = x[self.quadrature]
        before = np.concatenate([[0.0], np.cumsum(q[:, -1])[:-1]])
        return np.concatenate([[0.0], (before[:, None] + q).ravel()])

    def set_running_integral(self, x: np.ndarray, values) -> None:
        """Inverse of :meth:`running_integral`: store per-element increments."""
        if not self.has_quadrature:
            return
        v = np.asarray(values, dtype=float)
        ncp = self.quadrature.shape[1]
        nodes = v[1:].reshape(-1, ncp)
        starts = v[:-1:ncp]
        x[self.quadrature] = nodes - starts[:, None]


def transcribe(model: DagdpModel, assignment: Sequence[int], scheme: CollocationScheme,
               check: bool = True) -> DiscretizedNlp:
    """Collocation NLP for ``model`` with stage ``s`` fixed to mode ``assignment[s-1]``."""
    assignment = tuple(int(a) for a in assignment)
    if check and not is_feasible_configuration(model, assignment):
        raise InfeasibleConfiguration(f"assignment {assignment} violates the model logic")
    if len(assignment) != model.n_stages:
        raise InfeasibleConfiguration("assignment length does not match stage count")

    S, nfe, ncp = model.n_stages, scheme.n_fe, scheme.n_cp
    E = S * nfe
    tau = radau_points(ncp)
    M = differentiation_matrix(tau)
    times = np.asarray(model.stage_times, dtype=float)
    elem_stage = np.repeat(np.arange(S), nfe)
    width = ((times[1:] - times[:-1]) / nfe)[elem_stage]
    start = times[elem_stage] + (np.arange(E) % nfe) * width
    node_t = np.concatenate([[times[0]], (start[:, None] + tau[None, :] * width[:, None]).ravel()])
    node_t[-1] = times[-1]

    ns, nu = len(model.states), len(model.controls)
    na, npar = len(model.algebraics), len(model.parameters)
    quad = model.integrand is not None
    n_nodes = E * ncp + 1

    lower, upper, info = [], [], []
    nxt = 0

    def alloc(count):
        nonlocal nxt
        idx = np.arange(nxt, nxt + count)
        nxt += count
        return idx

    def node_meta(p):
        if p == 0:
            return 0, 0
        return (p - 1) // ncp, (p - 1) % ncp + 1

    state_idx = np.zeros((ns, n_nodes), dtype=np.int64)
    for k, sv in enumerate(model.states):
        state_idx[k] = alloc(n_nodes)
        lower += [sv.lower] * n_nodes
        upper += [sv.upper] * n_nodes
        for p in range(n_nodes):
            e, j = node_meta(p)
            info.append(VarInfo("state", sv.name, int(elem_stage[e]) + 1, e, j, float(node_t[p])))
    quad_idx = np.zeros((E if quad else 0, ncp), dtype=np.int64)
    if quad:
        quad_idx[:] = alloc(E * ncp).reshape(E, ncp)
        lower += [-np.inf] * (E * ncp)
        upper += [np.inf] * (E * ncp)
        for e in range(E):
            for j in range(1, ncp + 1):
                info.append(VarInfo("quadrature", "_q", int(elem_stage[e]) + 1, e, j,
                                    float(node_t[e * ncp + j])))
    ctrl_idx = np.zeros((nu, E), dtype=np.int64)
    for k, cv in enumerate(model.controls):
        ctrl_idx[k] = alloc(E)
        lo = np.full(E, cv.lower)
        hi = np.full(E, cv.upper)
        if cv.fixed_initial is not None:
            lo[0] = hi[0] = cv.fixed_initial
        lower += list(lo)
        upper += list(hi)
        for e in range(E):
            info.append(VarInfo("control", cv.name, int(elem_stage[e]) + 1, e, -1, float(start[e])))
    alg_idx = np.zeros((na, E, ncp), dtype=np.int64)
    for k, av in enumerate(model.algebraics):
        alg_idx[k] = alloc(E * ncp).reshape(E, ncp)
        lower += [av.lower] * (E * ncp)
        upper += [av.upper] * (E * ncp)
        for e in range(E):
            for j in range(1, ncp + 1):
                info.append(VarInfo("algebraic", av.name, int(elem_stage[e]) + 1, e, j,
                                    float(node_t[e * ncp + j])))
    par_idx = alloc(npar)
    for pv in model.parameters:
        lower.append(pv.lower)
        upper.append(pv.upper)
        info.append(VarInfo("parameter", pv.name))

    layout = Layout(scheme, assignment, tau, start, width, elem_stage, node_t, state_idx,
                    quad_idx, ctrl_idx, alg_idx, par_idx, quad)

    t_slot = model.time_index
    blocks: list[ConstraintBlock] = []
    for s in range(S):
        mode = model.disjunctions[s][assignment[s] - 1]
        elems = np.arange(s * nfe, (s + 1) * nfe)
        # rows ordered element-major, then collocation point
        ee = np.repeat(elems, ncp)
        kk = np.tile(np.arange(1, ncp + 1), nfe)
        nodes_at = ee * ncp + kk

        def slots():
            vs = {}
            for v in range(ns):
                vs[v] = state_idx[v][nodes_at]
            for c in range(nu):
                vs[ns + c] = ctrl_idx[c][ee]
            for a in range(na):
                vs[ns + nu + a] = alg_idx[a][ee, kk - 1]
            for p in range(npar):
                vs[ns + nu + na + p] = np.full(len(ee), par_idx[p])
            return vs

        data = {t_slot: node_t[nodes_at]}
        lin_coef = M[1:, kk - 1].T
        for v, rhs in enumerate(mode.rhs):
            # rows of M sum to zero, so the derivative is written on increments
            # from the element start (avoids cancellation for large states)
            lin_cols = state_idx[v][(ee * ncp)[:, None] + np.arange(1, ncp + 1)[None, :]]
            blocks.append(ConstraintBlock(
                len(ee), template=rhs, var_slots=slots(), data_slots=data,
                scale=-width[ee], lin_cols=lin_cols, lin_coef=lin_coef,
                lin_ref=state_idx[v][ee * ncp], kind="collocation",
                labels=[f"colloc[{model.states[v].name},{e},{k}]" for e, k in zip(ee, kk)],
            ))
        if quad:
            blocks.append(ConstraintBlock(
                len(ee), template=model.integrand, var_slots=slots(), data_slots=data,
                scale=-width[ee], lin_cols=quad_idx[ee], lin_coef=lin_coef, kind="collocation",
                labels=[f"colloc[_q,{e},{k}]" for e, k in zip(ee, kk)],
            ))
        for a_i, g in enumerate(mode.algebraic):
            blocks.append(ConstraintBlock(
                len(ee), template=g, var_slots=slots(), data_slots=data, kind="algebraic",
                labels=[f"alg{a_i}[{e},{k}]" for e, k in zip(ee, kk)],
            ))
        for c_i, g in enumerate(model.constraints):
            blocks.append(ConstraintBlock(
                len(ee), template=g, var_slots=slots(), data_slots=data, kind="path",
                labels=[f"path{c_i}[{e},{k}]" for e, k in zip(ee, kk)],
            ))
    for v, sv in enumerate(model.states):
        blocks.append(ConstraintBlock(
            1, lin_cols=[[state_idx[v][0]]], lin_coef=[[1.0]], const=[-sv.initial], kind="initial",
            labels=[f"init[{sv.name}]"],
        ))

    if quad:
        objective = model.objective_scale * _sum(var(int(i)) for i in quad_idx[:, -1])
    else:
        objective = const(0.0)
    return DiscretizedNlp(lower, upper, objective, blocks, info, layout)


def _sum(terms):
    """Balanced sum, so long objectives do not produce deep expression chains."""
    terms = list(terms)
    while len(terms) > 1:
        terms = [terms[i] + terms[i + 1] if i + 1 < len(terms) else terms[i]
                 for i in range(0, len(terms), 2)]
    return terms[0] if terms else const(0.0)


def collocation_equality_count(nlp: DiscretizedNlp) -> int:
    return sum(b.n_rows for b in nlp.blocks if b.kind == "collocation")


def solve_equalities(nlp: DiscretizedNlp, x0: np.ndarray, fixed: np.ndarray,
                     tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Newton's method on ``c(x) = 0`` over the non-fixed variables.

    With controls fixed the collocation system is square, so this is the
    "simulation mode" of the transcription.  Bounds are ignored.
    """
    x = np.array(x0, dtype=float)
    free = np.flatnonzero(~np.asarray(fixed, dtype=bool))
    if len(free) != nlp.m:
        raise ValueError(f"system is not square: {len(free)} unknowns, {nlp.m} equations")
    for _ in range(max_iter):
        c = nlp.c(x)
        if np.max(np.abs(c), initial=0.0) <= tol:
            return x
        J = nlp.jacobian(x)[:, free].tocsc()
        dx = spla.spsolve(J, -c)
        step = 1.0
        norm0 = np.linalg.norm(c)
        while step > 1e-6:
            trial = x.copy()
            trial[free] += step * dx
            with np.errstate(all="ignore"):
                ct = nlp.c(trial)
            if np.all(np.isfinite(ct)) and np.linalg.norm(ct) < norm0 * (1 - 1e-4 * step) + 1e-300:
                break
            step *= 0.5
        x = trial
        if step <= 1e-6:
            break
    c = nlp.c(x)
    if np.max(np.abs(c), initial=0.0) > max(tol, 1e-9) * 1e3:
        raise RuntimeError(f"collocation simulation did not converge (residual {np.max(np.abs(c)):.3e})")
    return x


def simulate_collocation(model: DagdpModel, assignment, scheme: CollocationScheme,
                         controls, x_start: np.ndarray | None = None):
    """States at every collocation node with controls held at ``controls``.

    ``controls`` has shape ``(n_elements, n_controls)``.  Returns
    ``(node_times, states)`` with ``states`` of shape ``(n_nodes, n_states)``;
    a column with the running integral is appended when the model has an
    integrand.
    """
    nlp = transcribe(model, assignment, scheme, check=False)
    lay = nlp.layout
    x = np.zeros(nlp.n) if x_start is None else np.array(x_start, dtype=float)
    if x_start is None:
        for v, sv in enumerate(model.states):
            x[lay.states[v]] = sv.initial
    fixed = np.zeros(nlp.n, dtype=bool)
    u = np.asarray(controls, dtype=float).reshape(lay.n_elements, len(model.controls))
    for c in range(len(model.controls)):
        x[lay.controls[c]] = u[:, c]
        fixed[lay.controls[c]] = True
    fixed[lay.parameters] = True
    x = solve_equalities(nlp, x, fixed)
    cols = [x[lay.states].T]
    if lay.has_quadrature:
        cols.append(lay.running_integral(x)[:, None])
    return lay.node_times, np.hstack(cols)


__all__ = [
    "CollocationScheme",
    "Layout",
    "collocation_equality_count",
    "differentiation_matrix",
    "radau_points",
    "simulate_collocation",
    "solve_equalities",
    "transcribe",
]
