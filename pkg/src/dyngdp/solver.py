"""Augmented Lagrangian solver for bound-constrained, equality-constrained NLPs.

Outer loop: minimise the merit

    phi(x) = f(x) + lam'c(x) + mu/2 |c(x)|^2      subject to  lo <= x <= hi,

then set ``lam += mu * c`` and grow ``mu`` when ``|c|_inf`` fails to shrink by
a factor of four.

Inner loop (default): a line-search variant of the Lin-More bound-constrained
Newton method.  The Hessian is ``mu J'J`` plus the exact curvature of
``f + (lam + mu c)'c``.  Each iteration takes a Cauchy step along the
projected gradient path, which can fix many bounds at once, then Newton
steps on the variables still free; when the free block is not positive
definite it is shifted by a multiple of its diagonal (the inertia is read off
the factorisation).  An Armijo backtracking on ``phi`` accepts the combined
step.

``SolverSettings(hessian="lbfgs")`` selects the alternative inner loop: a
projected quasi-Newton method that keeps ``mu J'J`` exact and models the rest
of the Hessian with limited-memory BFGS.  It needs no second derivatives but
takes far more iterations on the bang-bang control problems of this package.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .nlp import DiscretizedNlp

# relative size of merit changes treated as rounding noise
ROUNDOFF = 1e3 * np.finfo(float).eps
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration_limit"
NUMERIC_FAILURE = "numeric_failure"


@dataclass(frozen=True)
class SolverSettings:
    feas_tol: float = 1e-6
    opt_tol: float = 1e-6
    mu0: float = 10.0
    mu_growth: float = 10.0
    mu_max: float = 1e8
    max_outer: int = 50
    max_inner: int = 500
    infeasible_tol: float = 1e-4
    hessian: str = "exact"   # exact | lbfgs
    memory: int = 6
    restarts: int = 0
    seed: int = 0
    record_history: bool = False

    def __post_init__(self):
        if self.feas_tol <= 0 or self.opt_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.mu_growth <= 1:
            raise ValueError("penalty growth factor must exceed 1")
        if self.hessian not in ("exact", "lbfgs"):
            raise ValueError(f"unknown Hessian model {self.hessian!r}")


@dataclass
class SolveResult:
    status: str
    objective: float
    x: np.ndarray
    max_violation: float
    projected_gradient: float
    outer_iterations: int
    inner_iterations: int
    wall_time: float
    multipliers: np.ndarray | None = None
    penalty: float = 0.0
    # merit value at the start of each inner loop and after every accepted
    # step, one list per outer iteration
    merit_history: list[list[float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "max_violation": self.max_violation,
            "projected_gradient": self.projected_gradient,
            "outer_iterations": self.outer_iterations,
            "inner_iterations": self.inner_iterations,
            "wall_time": self.wall_time,
        }


def projected_gradient_norm(x, g, lo, hi) -> float:
    if len(x) == 0:
        return 0.0
    return float(np.max(np.abs(x - np.clip(x - g, lo, hi))))


class _Merit:
    def __init__(self, nlp: DiscretizedNlp, lam, mu):
        self.nlp, self.lam, self.mu = nlp, lam, mu
        self.evals = 0

    def value(self, x):
        self.evals += 1
        with np.errstate(all="ignore"):
            c = self.nlp.c(x)
            v = self.nlp.f(x) + self.lam @ c + 0.5 * self.mu * (c @ c)
        return v if np.isfinite(v) else np.inf

    def full(self, x):
        c = self.nlp.c(x)
        J = self.nlp.jacobian(x)
        g = self.nlp.grad_f(x) + J.T @ (self.lam + self.mu * c)
        v = self.nlp.f(x) + self.lam @ c + 0.5 * self.mu * (c @ c)
        return v, g, c, J


# widest band handed to the banded Cholesky; wider systems use sparse LU
MAX_BAND = 120


def _band_order(H) -> np.ndarray:
    """Position of every variable in a bandwidth-reducing order of ``H``."""
    perm = csgraph.reverse_cuthill_mckee(sp.csr_matrix(H), symmetric_mode=True)
    pos = np.empty(len(perm), dtype=np.int64)
    pos[perm] = np.arange(len(perm))
    return pos


def _factor_convex(H, free, pos, delta0: float, floor: float = 0.0):
    """Factor ``H_FF + delta D`` for the smallest tried ``delta >= floor`` that is positive definite.

    ``D`` is the absolute diagonal of ``H_FF`` (Marquardt scaling), bounded
    away from zero.  Returns a solver for the shifted system and ``delta``.
    Narrow-band systems (in the order ``pos``) use a banded Cholesky, whose
    failure is the definiteness test; otherwise a symmetric-mode sparse LU
    without off-diagonal pivoting stands in for ``LDL'`` and the signs on the
    diagonal of ``U`` give the inertia.
    """
    n = H.shape[0]
    isfree = np.zeros(n, dtype=bool)
    isfree[free] = True
    coo = H.tocoo()
    keep = isfree[coo.row] & isfree[coo.col]
    r, c, v = coo.row[keep], coo.col[keep], coo.data[keep]
    # free variables renumbered 0..nf-1 following the band order
    rank = np.full(n, -1, dtype=np.int64)
    by_pos = free[np.argsort(pos[free], kind="stable")]
    rank[by_pos] = np.arange(len(free))
    rr, cc = rank[r], rank[c]
    nf = len(free)
    diag = np.zeros(nf)
    np.add.at(diag, rr[rr == cc], v[rr == cc])
    shift = np.maximum(np.abs(diag), 1e-8 * max(1.0, np.abs(diag).max(initial=0.0)))
    lower = rr >= cc
    band = int((rr - cc)[lower].max(initial=0))

    def next_delta(delta):
        if delta == 0.0:
            return max(1e-10, delta0 / 3) if delta0 > 0 else 1e-6
        return delta * 8.0

    delta = floor
    if band <= MAX_BAND:
        ab = np.zeros((band + 1, nf))
        np.add.at(ab, (rr[lower] - cc[lower], cc[lower]), v[lower])
        for _ in range(80):
            shifted = ab.copy()
            shifted[0] += delta * shift
            try:
                cb = la.cholesky_banded(shifted, lower=True, check_finite=False)
            except la.LinAlgError:
                delta = next_delta(delta)
                continue
            if np.all(np.isfinite(cb)):
                return _BandSolve(cb, rank[free]), delta
            delta = next_delta(delta)
        raise FloatingPointError("could not regularise the Hessian")

    A = sp.csc_matrix((v, (rr, cc)), shape=(nf, nf))
    for _ in range(80):
        try:
            lu = spla.splu((A + sp.diags(delta * shift)).tocsc(), permc_spec="MMD_AT_PLUS_A",
                           diag_pivot_thresh=0.0, options={"SymmetricMode": True})
            piv = lu.U.diagonal()
            if np.all(lu.perm_r == lu.perm_c) and np.all(piv > 0) and np.all(np.isfinite(piv)):
                return _LuSolve(lu, rank[free]), delta
        except RuntimeError:
            pass
        delta = next_delta(delta)
    raise FloatingPointError("could not regularise the Hessian")


class _BandSolve:
    def __init__(self, cb, where):
        self.cb, self.where = cb, where

    def solve(self, rhs):
        b = np.empty(len(rhs))
        b[self.where] = rhs
        return la.cho_solve_banded((self.cb, True), b, check_finite=False)[self.where]


class _LuSolve:
    def __init__(self, lu, where):
        self.lu, self.where = lu, where

    def solve(self, rhs):
        b = np.empty(len(rhs))
        b[self.where] = rhs
        return self.lu.solve(b)[self.where]


def _quadratic(H, g, s) -> float:
    return float(g @ s + 0.5 * s @ (H @ s))


def _cauchy_step(H, g, x, lo, hi, t):
    """Moré-Toraldo search along ``P(x - t g)`` for a model-decreasing ``t``."""

    def step(t):
        return np.clip(x - t * g, lo, hi) - x

    def ok(s):
        gs = g @ s
        return gs < 0 and _quadratic(H, g, s) <= 0.01 * gs

    s = step(t)
    if ok(s):
        for _ in range(30):
            s2 = step(2 * t)
            if np.array_equal(s2, s) or not ok(s2) or _quadratic(H, g, s2) >= _quadratic(H, g, s):
                break
            t, s = 2 * t, s2
        return s, t
    for _ in range(60):
        t *= 0.5
        s = step(t)
        if ok(s):
            return s, t
    return np.zeros_like(x), t


def _subspace_newton(H, g, x, xc, lo, hi, delta, floor, pos, passes=10):
    """Newton steps on the variables left free at the Cauchy point.

    Returns the point, the convexifying shift used and the step fraction
    accepted on the first pass (0 when no fraction decreased the model).
    """
    p = xc
    first = None
    for _ in range(passes):
        free = np.flatnonzero((p > lo) & (p < hi))
        if not len(free):
            break
        r = g + H @ (p - x)
        fac, delta = _factor_convex(H, free, pos, delta, floor)
        dF = fac.solve(-r[free])
        q0 = _quadratic(H, g, p - x)
        beta, cand = 1.0, None
        for _ in range(30):
            trial = p.copy()
            trial[free] = np.clip(p[free] + beta * dF, lo[free], hi[free])
            if _quadratic(H, g, trial - x) <= q0 + 1e-4 * (r[free] @ (trial[free] - p[free])):
                cand = trial
                break
            beta *= 0.5
        if first is None:
            first = beta if cand is not None else 0.0
        if cand is None:
            break
        hit = np.any((cand[free] <= lo[free]) | (cand[free] >= hi[free]))
        p = cand
        if not hit:
            break
    return p, delta, 1.0 if first is None else first


def _inner(nlp, merit: _Merit, x, tol, max_iter, settings, history):
    if settings.hessian == "lbfgs":
        return _inner_lbfgs(nlp, merit, x, tol, max_iter, settings, history)
    lo, hi = nlp.lower, nlp.upper
    v, g, c, J = merit.full(x)
    if history is not None:
        history.append(v)
    its = 0
    delta = 0.0
    # Levenberg-Marquardt style lower bound on the shift: nearly singular
    # reduced Hessians (bang-bang controls) otherwise give huge Newton steps
    floor = 0.0
    t = 1.0
    pos = None
    pg = projected_gradient_norm(x, g, lo, hi)
    while its < max_iter and pg > tol:
        its += 1
        H = (nlp.hessian(x, merit.lam + merit.mu * c) + merit.mu * (J.T @ J)).tocsr()
        if pos is None:
            pos = _band_order(H)
        sc, t = _cauchy_step(H, g, x, lo, hi, t)
        p, delta, beta = _subspace_newton(H, g, x, x + sc, lo, hi, delta, floor, pos)
        if beta < 0.1:
            floor = min(1e6, max(1e-6, 10 * floor))
        elif beta == 1.0:
            floor = floor / 10 if floor > 1e-6 else 0.0
        s = p - x
        if not g @ s < 0:
            s = sc
        noise = ROUNDOFF * max(1.0, abs(v))
        if -(g @ s) <= noise:
            # the predicted decrease is lost in rounding: judge the full
            # step by the projected gradient instead of the merit value
            trial = x + s
            v_new, g_new, c_new, J_new = merit.full(trial)
            if not (v_new <= v + noise and np.all(np.isfinite(g_new))
                    and projected_gradient_norm(trial, g_new, lo, hi) < pg):
                break
        else:
            accepted = False
            alpha = 1.0
            for _ in range(60):
                trial = x + alpha * s
                vt = merit.value(trial)
                if vt <= v + 1e-4 * alpha * (g @ s) and vt <= v:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
            v_new, g_new, c_new, J_new = merit.full(trial)
            if not np.isfinite(v_new) or not np.all(np.isfinite(g_new)):
                break
        x, v, g, c, J = trial, v_new, g_new, c_new, J_new
        if history is not None:
            history.append(v)
        pg = projected_gradient_norm(x, g, lo, hi)
    return x, g, c, its, pg


class _LimitedMemory:
    """Compact L-BFGS representation ``B = sigma I - W K^{-1} W'``."""

    def __init__(self, memory: int):
        self.memory = memory
        self.S: list[np.ndarray] = []
        self.Y: list[np.ndarray] = []
        self.sigma = None

    def update(self, s, y):
        sy = s @ y
        if sy <= 1e-10 * np.linalg.norm(s) * np.linalg.norm(y) or sy <= 0:
            return
        self.S.append(s)
        self.Y.append(y)
        if len(self.S) > self.memory:
            self.S.pop(0)
            self.Y.pop(0)
        self.sigma = float(np.clip((y @ y) / sy, 1e-8, 1e8))

    def factors(self):
        if not self.S:
            return None, None
        S = np.column_stack(self.S)
        Y = np.column_stack(self.Y)
        SY = S.T @ Y
        L = np.tril(SY, -1)
        D = np.diag(np.diag(SY))
        K = np.block([[self.sigma * (S.T @ S), L], [L.T, -D]])
        W = np.hstack([self.sigma * S, Y])
        return W, K


def _lbfgs_step(J, mu, sigma, lm: _LimitedMemory, g, free):
    JF = J[:, free]
    C = (mu * (JF.T @ JF) + sigma * sp.identity(JF.shape[1], format="csc")).tocsc()
    lu = spla.splu(C)
    d = lu.solve(-g[free])
    W, K = lm.factors()
    if W is not None:
        WF = W[free]
        CiW = lu.solve(WF)
        try:
            d = d + CiW @ np.linalg.solve(K - WF.T @ CiW, WF.T @ d)
        except np.linalg.LinAlgError:
            pass
    return d


def _inner_lbfgs(nlp, merit: _Merit, x, tol, max_iter, settings, history):
    """Projected structured quasi-Newton: exact ``mu J'J`` plus L-BFGS for the rest."""
    lo, hi = nlp.lower, nlp.upper
    v, g, c, J = merit.full(x)
    if history is not None:
        history.append(v)
    lm = _LimitedMemory(settings.memory)
    its = 0
    pg = projected_gradient_norm(x, g, lo, hi)
    while its < max_iter and pg > tol:
        its += 1
        eps = min(1e-3, pg)
        active = ((x <= lo + eps) & (g > 0)) | ((x >= hi - eps) & (g < 0))
        free = np.flatnonzero(~active)
        sigma = lm.sigma if lm.sigma is not None else max(1e-6, 1e-6 * merit.mu)
        d = -g.copy()
        if len(free):
            d[free] = _lbfgs_step(J, merit.mu, sigma, lm, g, free)

        accepted = False
        for direction in (d, -g):
            alpha = 1.0
            for _ in range(60):
                trial = np.clip(x + alpha * direction, lo, hi)
                dec = g @ (trial - x)
                if dec >= 0 and np.max(np.abs(trial - x)) < 1e-15:
                    break
                vt = merit.value(trial)
                if vt <= v + 1e-4 * dec and vt <= v:
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                if alpha == 1.0:
                    # negative curvature along the step leaves the model
                    # step too short; keep doubling while the merit drops
                    for _ in range(40):
                        ext = np.clip(x + 2.0 * alpha * direction, lo, hi)
                        if np.array_equal(ext, trial):
                            break
                        ve = merit.value(ext)
                        if not ve < vt:
                            break
                        alpha, trial, vt = 2.0 * alpha, ext, ve
                break
        if not accepted:
            break
        v_new, g_new, c_new, J_new = merit.full(trial)
        if not np.isfinite(v_new) or not np.all(np.isfinite(g_new)):
            break
        s = trial - x
        # secant pair for the part of the Hessian not covered by mu J'J
        lm.update(s, g_new - g - merit.mu * (J_new.T @ (J_new @ s)))
        x, v, g, c, J = trial, v_new, g_new, c_new, J_new
        if history is not None:
            history.append(v)
        pg = projected_gradient_norm(x, g, lo, hi)
    return x, g, c, its, pg


def _solve_once(nlp: DiscretizedNlp, x0, settings: SolverSettings) -> SolveResult:
    t0 = time.perf_counter()
    lo, hi = nlp.lower, nlp.upper
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    lam = np.zeros(nlp.m)
    mu = settings.mu0
    hist: list[list[float]] = []
    total_inner = 0
    c = nlp.c(x)
    if not np.all(np.isfinite(c)):
        return _result(NUMERIC_FAILURE, nlp, x, c, np.inf, 0, 0, t0, lam, mu, hist)
    # the start is often nearly feasible (simulated states), so the first
    # outer iteration is never compared against it
    prev_viol = np.inf
    omega = 1e-2
    status = ITERATION_LIMIT
    pg = np.inf
    outer = 0
    for outer in range(1, settings.max_outer + 1):
        merit = _Merit(nlp, lam, mu)
        history = [] if settings.record_history else None
        try:
            x, g, c, its, pg = _inner(nlp, merit, x, max(omega, settings.opt_tol),
                                      settings.max_inner, settings, history)
        except (FloatingPointError, ArithmeticError, RuntimeError):
            status = NUMERIC_FAILURE
            break
        if history is not None:
            hist.append(history)
        total_inner += its
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(x)):
            status = NUMERIC_FAILURE
            break
        viol = float(np.max(np.abs(c), initial=0.0))
        if viol <= settings.feas_tol and pg <= settings.opt_tol:
            status = OPTIMAL
            break
        lam = lam + mu * c
        if viol > settings.feas_tol and viol > 0.25 * prev_viol:
            if mu >= settings.mu_max and viol > settings.infeasible_tol:
                status = INFEASIBLE
                break
            mu = min(mu * settings.mu_growth, settings.mu_max)
        prev_viol = viol
        # no point minimising the merit far beyond the current infeasibility
        omega = max(settings.opt_tol, min(1e-2, 0.1 * viol))
    return _result(status, nlp, x, c, pg, outer, total_inner, t0, lam, mu, hist)


def _result(status, nlp, x, c, pg, outer, inner, t0, lam, mu, hist):
    viol = float(np.max(np.abs(c), initial=0.0)) if np.all(np.isfinite(c)) else np.inf
    try:
        obj = nlp.f(x)
    except ArithmeticError:
        obj = np.nan
    return SolveResult(status, obj, x, viol, float(pg), outer, inner,
                       time.perf_counter() - t0, lam, mu, hist)


def solve(nlp: DiscretizedNlp, initial, settings: SolverSettings | None = None) -> SolveResult:
    """Locally solve ``nlp`` from ``initial``; see the module docstring.

    With ``settings.restarts = k`` the solve is repeated from ``k`` randomly
    perturbed copies of ``initial`` and the best optimal result is returned.
    """
    settings = settings or SolverSettings()
    initial = np.asarray(initial, dtype=float)
    if initial.shape != (nlp.n,):
        raise ValueError(f"initial point has shape {initial.shape}, expected ({nlp.n},)")
    best = _solve_once(nlp, initial, settings)
    if settings.restarts:
        rng = np.random.default_rng(settings.seed)
        span = np.where(np.isfinite(nlp.upper - nlp.lower), nlp.upper - nlp.lower, 1.0)
        for _ in range(settings.restarts):
            trial = initial + 0.05 * span * rng.standard_normal(nlp.n)
            res = _solve_once(nlp, trial, settings)
            if res.ok and (not best.ok or res.objective < best.objective):
                best = res
    return best
