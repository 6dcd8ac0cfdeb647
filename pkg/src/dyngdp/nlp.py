"""Algebraic NLP container: bounds, objective and blocks of equalities.

Equality rows are grouped in :class:`ConstraintBlock` objects.  A block is
one expression template evaluated over many rows at once, plus a linear part
with constant coefficients::

    c_r(x) = sum_l coef[r, l] * (x[cols[r, l]] - x[ref[r]]) + scale[r] * g(slots_r(x)) + const[r]

which is exactly the shape of a collocation equation (a derivative written
as a linear combination of node values, minus the step times the dynamics).
The optional reference column ``ref`` lets such a combination be written in
terms of differences from the element start: the result is the same when
the coefficients sum to zero, but far less cancellation happens when the
node values are large compared with their increments.  Without ``ref`` the
differences are plain values.  A single scalar constraint is the degenerate
case with one row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .expr import Expression, Tape, const, diff, to_prefix, var


@dataclass
class ConstraintBlock:
    n_rows: int
    template: Expression | None = None
    # template slot -> (n_rows,) flat variable indices
    var_slots: dict[int, np.ndarray] = field(default_factory=dict)
    # template slot -> (n_rows,) constant values (e.g. the time of the row)
    data_slots: dict[int, np.ndarray] = field(default_factory=dict)
    scale: np.ndarray | None = None
    lin_cols: np.ndarray | None = None
    lin_coef: np.ndarray | None = None
    const: np.ndarray | None = None
    lin_ref: np.ndarray | None = None
    kind: str = "equality"
    labels: list[str] | None = None

    def __post_init__(self):
        m = self.n_rows
        self.scale = np.ones(m) if self.scale is None else np.broadcast_to(np.asarray(self.scale, float), (m,)).copy()
        self.const = np.zeros(m) if self.const is None else np.broadcast_to(np.asarray(self.const, float), (m,)).copy()
        if self.lin_cols is None:
            self.lin_cols = np.zeros((m, 0), dtype=np.int64)
            self.lin_coef = np.zeros((m, 0))
        self.lin_cols = np.asarray(self.lin_cols, dtype=np.int64).reshape(m, -1)
        self.lin_coef = np.broadcast_to(np.asarray(self.lin_coef, float), self.lin_cols.shape).copy()
        if self.lin_ref is not None:
            self.lin_ref = np.broadcast_to(np.asarray(self.lin_ref, dtype=np.int64), (m,)).copy()
        self._tape = Tape(self.template) if self.template is not None else None
        self._htapes = None
        if self._tape is not None:
            width = self._tape.max_index + 1
            for i in self._tape.variables:
                if i not in self.var_slots and i not in self.data_slots:
                    raise ValueError(f"template slot {i} is not bound")
            self._width = width
            self._jac_slots = [i for i in self._tape.variables if i in self.var_slots]

    def _local(self, x):
        pt = [0.0] * self._width
        for i, idx in self.var_slots.items():
            if i < self._width:
                pt[i] = x[idx]
        for i, vals in self.data_slots.items():
            if i < self._width:
                pt[i] = vals
        return pt

    def residual(self, x: np.ndarray) -> np.ndarray:
        vals = x[self.lin_cols]
        if self.lin_ref is not None:
            vals = vals - x[self.lin_ref][:, None]
        r = (self.lin_coef * vals).sum(axis=1) + self.const
        if self._tape is not None:
            r = r + self.scale * np.broadcast_to(self._tape.evaluate(self._local(x)), (self.n_rows,))
        return r

    def pattern(self, row_offset: int):
        """Row/column arrays of the Jacobian entries, in :meth:`jac_values` order."""
        m = self.n_rows
        rows = [np.repeat(np.arange(m), self.lin_cols.shape[1])]
        cols = [self.lin_cols.ravel()]
        if self.lin_ref is not None:
            rows.append(np.arange(m))
            cols.append(self.lin_ref)
        if self._tape is not None:
            for i in self._jac_slots:
                rows.append(np.arange(m))
                cols.append(np.broadcast_to(self.var_slots[i], (m,)))
        return np.concatenate(rows) + row_offset, np.concatenate(cols)

    def jac_values(self, x: np.ndarray) -> np.ndarray:
        vals = [self.lin_coef.ravel()]
        if self.lin_ref is not None:
            vals.append(-self.lin_coef.sum(axis=1))
        if self._tape is not None:
            _, grads = self._tape.partials(self._local(x))
            for i in self._jac_slots:
                vals.append(self.scale * np.broadcast_to(grads.get(i, 0.0), (self.n_rows,)))
        return np.concatenate(vals)

    def _hessian_tapes(self):
        """Tapes of the second derivatives of the template, upper triangle only."""
        if self._htapes is None:
            firsts = {i: diff(self.template, i) for i in self._jac_slots}
            tapes = []
            for a, i in enumerate(self._jac_slots):
                for j in self._jac_slots[a:]:
                    d2 = diff(firsts[i], j)
                    if not (d2.op == "const" and d2.value == 0.0):
                        tapes.append((i, j, Tape(d2)))
            self._htapes = tapes
        return self._htapes

    def hess_entries(self, x: np.ndarray, weights: np.ndarray):
        """Triplets of ``sum_r weights[r] * hess(c_r)`` over flat variables."""
        empty = (np.zeros(0, dtype=np.int64),) * 2 + (np.zeros(0),)
        if self._tape is None or not self._jac_slots:
            return empty
        tapes = self._hessian_tapes()
        if not tapes:
            return empty
        pt = self._local(x)
        w = self.scale * np.broadcast_to(weights, (self.n_rows,))
        rows, cols, vals = [], [], []
        m = self.n_rows
        for i, j, tape in tapes:
            h = w * np.broadcast_to(tape.evaluate(pt), (m,))
            ri = np.broadcast_to(self.var_slots[i], (m,))
            rj = np.broadcast_to(self.var_slots[j], (m,))
            rows.append(ri)
            cols.append(rj)
            vals.append(h)
            if i != j:
                rows.append(rj)
                cols.append(ri)
                vals.append(h)
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    def row_expressions(self, names) -> list[str]:
        """Prefix rendering of each row over flat variables (for dumps)."""
        out = []
        for r in range(self.n_rows):
            e: Expression = const(self.const[r])
            for c, a in zip(self.lin_cols[r], self.lin_coef[r]):
                if self.lin_ref is not None:
                    e = e + a * (var(int(c)) - var(int(self.lin_ref[r])))
                else:
                    e = e + a * var(int(c))
            if self.template is not None:
                e = e + self.scale[r] * _instantiate(self.template, self, r)
            out.append(to_prefix(e, names))
        return out


def _instantiate(template: Expression, block: ConstraintBlock, r: int) -> Expression:
    if template.op == "var":
        i = template.index
        if i in block.var_slots:
            return var(int(np.broadcast_to(block.var_slots[i], (block.n_rows,))[r]))
        return const(float(np.broadcast_to(block.data_slots[i], (block.n_rows,))[r]))
    if not template.args:
        return template
    return Expression(template.op, tuple(_instantiate(a, block, r) for a in template.args),
                      template.value, template.index)


def _is_affine(expr: Expression) -> bool:
    stack = [expr]
    while stack:
        e = stack.pop()
        if e.op in ("const", "var"):
            continue
        if e.op in ("add", "sub", "neg"):
            stack.extend(e.args)
        elif e.op == "mul" and any(a.op == "const" for a in e.args):
            stack.extend(e.args)
        elif e.op == "div" and e.args[1].op == "const":
            stack.append(e.args[0])
        else:
            return False
    return True


@dataclass(frozen=True)
class VarInfo:
    kind: str           # state | quadrature | control | algebraic | parameter
    name: str
    stage: int = 0      # 1-based, 0 when not time-indexed
    element: int = -1   # global element index
    point: int = -1     # 0 = element start, 1..ncp = collocation points
    time: float = float("nan")


class DiscretizedNlp:
    """min f(x)  s.t.  c(x) = 0,  lower <= x <= upper."""

    def __init__(self, lower, upper, objective: Expression, blocks: list[ConstraintBlock],
                 info: list[VarInfo] | None = None, layout=None):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.n = len(self.lower)
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        self.objective = objective
        self._obj_tape = Tape(objective)
        obj_vars = sorted(objective.variables())
        self._obj_block = ConstraintBlock(
            1, template=objective, var_slots={i: np.array([i]) for i in obj_vars}
        ) if obj_vars and not _is_affine(objective) else None
        if self._obj_tape.max_index >= self.n:
            raise ValueError("objective references unknown variable")
        self.blocks = list(blocks)
        self.info = info or [VarInfo("free", f"x[{i}]") for i in range(self.n)]
        self.layout = layout
        self.m = sum(b.n_rows for b in self.blocks)
        rows, cols = [], []
        off = 0
        for b in self.blocks:
            r, c = b.pattern(off)
            rows.append(r)
            cols.append(c)
            off += b.n_rows
        self._rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        self._cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)

    @classmethod
    def from_expressions(cls, lower, upper, objective, equalities=()):
        """Build from plain expressions over the flat variables ``x[i]``."""
        blocks = []
        for e in equalities:
            slots = {i: np.array([i]) for i in e.variables()}
            blocks.append(ConstraintBlock(1, template=e, var_slots=slots))
        return cls(lower, upper, objective, blocks)

    def f(self, x: np.ndarray) -> float:
        return float(self._obj_tape.evaluate(x))

    def grad_f(self, x: np.ndarray) -> np.ndarray:
        _, grads = self._obj_tape.partials(x)
        g = np.zeros(self.n)
        for i, d in grads.items():
            g[i] = d
        return g

    def c(self, x: np.ndarray) -> np.ndarray:
        if not self.blocks:
            return np.zeros(0)
        return np.concatenate([b.residual(x) for b in self.blocks])

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        if not self.blocks:
            return sp.csr_matrix((0, self.n))
        vals = np.concatenate([b.jac_values(x) for b in self.blocks])
        return sp.csr_matrix((vals, (self._rows, self._cols)), shape=(self.m, self.n))

    def hessian(self, x: np.ndarray, weights: np.ndarray, obj_weight: float = 1.0) -> sp.csc_matrix:
        """Hessian of ``obj_weight * f + weights' c`` (curvature terms only)."""
        parts = []
        if self._obj_block is not None and obj_weight:
            parts.append(self._obj_block.hess_entries(x, np.array([obj_weight])))
        off = 0
        for b in self.blocks:
            parts.append(b.hess_entries(x, weights[off: off + b.n_rows]))
            off += b.n_rows
        parts = [p for p in parts if len(p[0])]
        if not parts:
            return sp.csc_matrix((self.n, self.n))
        r = np.concatenate([p[0] for p in parts])
        c = np.concatenate([p[1] for p in parts])
        v = np.concatenate([p[2] for p in parts])
        return sp.csc_matrix((v, (r, c)), shape=(self.n, self.n))

    def referenced(self) -> np.ndarray:
        """Boolean mask of variables that appear in some row or the objective."""
        used = np.zeros(self.n, dtype=bool)
        used[self._cols] = True
        used[list(self.objective.variables())] = True
        return used

    def var_names(self) -> list[str]:
        out = []
        for i, v in enumerate(self.info):
            if v.kind in ("state", "quadrature", "algebraic"):
                out.append(f"{v.name}[{v.element},{v.point}]")
            elif v.kind == "control":
                out.append(f"{v.name}[{v.element}]")
            else:
                out.append(v.name if v.kind == "parameter" else f"x{i}")
        return out

    def dump(self, path) -> None:
        """Write variables, bounds and every row in prefix notation."""
        names = self.var_names()
        lines = [f"# variables {self.n}", f"# equalities {self.m}"]
        for i, nm in enumerate(names):
            lines.append(f"var {i} {nm} {self.lower[i]!r} {self.upper[i]!r}")
        lines.append(f"objective {to_prefix(self.objective, names)}")
        for b in self.blocks:
            for k, row in enumerate(b.row_expressions(names)):
                label = b.labels[k] if b.labels else b.kind
                lines.append(f"eq {label} {row}")
        Path(path).write_text("\n".join(lines) + "\n")
