"""Scalar expression trees with evaluation and reverse-mode gradients.

Expressions are immutable trees over indexed variables.  They are built with
ordinary Python operators::

    >>> x = var(0)
    >>> e = -x * exp(x - 1)
    >>> evaluate(e, [1.0])
    -1.0

Evaluation accepts either plain floats or numpy arrays as the variable
values; with arrays every operation broadcasts, which is how the collocation
blocks evaluate one template over many rows at once.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, IndexOutOfRange, ModelFormatError

UNARY = ("neg", "exp", "log")
BINARY = ("add", "sub", "mul", "div")


@dataclass(frozen=True, eq=True, repr=False)
class Expression:
    """Immutable expression node.

    ``op`` is one of ``const``, ``var``, ``neg``, ``exp``, ``log``, ``add``,
    ``sub``, ``mul``, ``div`` or ``pow``.  ``value`` holds the constant for
    ``const`` nodes and the (fixed) exponent for ``pow`` nodes.
    """

    op: str
    args: tuple = ()
    value: float = 0.0
    index: int = -1

    def __post_init__(self):
        if self.op == "var" and self.index < 0:
            raise ValueError("variable index must be nonnegative")

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return Expression("add", (self, as_expr(other)))

    def __radd__(self, other):
        return Expression("add", (as_expr(other), self))

    def __sub__(self, other):
        return Expression("sub", (self, as_expr(other)))

    def __rsub__(self, other):
        return Expression("sub", (as_expr(other), self))

    def __mul__(self, other):
        return Expression("mul", (self, as_expr(other)))

    def __rmul__(self, other):
        return Expression("mul", (as_expr(other), self))

    def __truediv__(self, other):
        return Expression("div", (self, as_expr(other)))

    def __rtruediv__(self, other):
        return Expression("div", (as_expr(other), self))

    def __neg__(self):
        return Expression("neg", (self,))

    def __pow__(self, exponent):
        if isinstance(exponent, Expression):
            if exponent.op != "const":
                raise TypeError("exponent must be a constant")
            exponent = exponent.value
        return Expression("pow", (self,), value=float(exponent))

    def __repr__(self):
        return f"Expression({to_prefix(self)})"

    def variables(self) -> set[int]:
        """Indices of all variables referenced by the tree."""
        return {node.index for node in _postorder(self) if node.op == "var"}


def const(value: float) -> Expression:
    return Expression("const", value=float(value))


def var(index: int) -> Expression:
    return Expression("var", index=int(index))


def as_expr(value) -> Expression:
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, float, np.integer, np.floating)):
        return const(value)
    raise TypeError(f"cannot convert {type(value).__name__} to Expression")


def exp(e) -> Expression:
    return Expression("exp", (as_expr(e),))


def log(e) -> Expression:
    return Expression("log", (as_expr(e),))


def _postorder(expr: Expression) -> list[Expression]:
    # Iterative so that deep trees cannot hit the recursion limit; shared
    # subtrees are visited once.
    order, seen = [], set()
    stack = [(expr, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        for child in reversed(node.args):
            if id(child) not in seen:
                stack.append((child, False))
    return order


class Tape:
    """A linearised expression ready for repeated evaluation.

    Compiling once and reusing the tape avoids re-walking the tree on every
    call; the tape itself holds no per-call state, so it may be shared.
    """

    def __init__(self, expr: Expression):
        nodes = _postorder(expr)
        pos = {id(n): k for k, n in enumerate(nodes)}
        self.ops = [n.op for n in nodes]
        self.children = [tuple(pos[id(c)] for c in n.args) for n in nodes]
        self.values = [n.value for n in nodes]
        self.indices = [n.index for n in nodes]
        self.variables = sorted({n.index for n in nodes if n.op == "var"})
        self.max_index = max(self.variables, default=-1)

    def _forward(self, point):
        if self.max_index >= len(point):
            raise IndexOutOfRange(
                f"expression uses variable {self.max_index} but point has "
                f"{len(point)} entries"
            )
        vals = [None] * len(self.ops)
        for k, op in enumerate(self.ops):
            ch = self.children[k]
            if op == "const":
                v = self.values[k]
            elif op == "var":
                v = point[self.indices[k]]
            elif op == "add":
                v = vals[ch[0]] + vals[ch[1]]
            elif op == "sub":
                v = vals[ch[0]] - vals[ch[1]]
            elif op == "mul":
                v = vals[ch[0]] * vals[ch[1]]
            elif op == "div":
                den = vals[ch[1]]
                if np.any(np.asarray(den) == 0):
                    raise DomainError("division by zero")
                v = vals[ch[0]] / den
            elif op == "neg":
                v = -vals[ch[0]]
            elif op == "exp":
                v = np.exp(vals[ch[0]])
            elif op == "log":
                a = vals[ch[0]]
                if np.any(np.asarray(a) <= 0):
                    raise DomainError("log of a nonpositive value")
                v = np.log(a)
            elif op == "pow":
                v = _power(vals[ch[0]], self.values[k])
            else:  # pragma: no cover - guarded at construction
                raise ValueError(f"unknown op {op!r}")
            vals[k] = v
        return vals

    def evaluate(self, point):
        vals = self._forward(point)
        out = vals[-1]
        return float(out) if np.ndim(out) == 0 else out

    def partials(self, point):
        """Return ``(value, {index: d value / d x_index})``."""
        vals = self._forward(point)
        n = len(self.ops)
        adj = [0.0] * n
        adj[-1] = np.ones_like(vals[-1], dtype=float) if np.ndim(vals[-1]) else 1.0
        grads: dict[int, object] = {}
        for k in range(n - 1, -1, -1):
            a = adj[k]
            op = self.ops[k]
            ch = self.children[k]
            if op == "const":
                continue
            if op == "var":
                i = self.indices[k]
                grads[i] = grads.get(i, 0.0) + a
            elif op == "add":
                adj[ch[0]] = adj[ch[0]] + a
                adj[ch[1]] = adj[ch[1]] + a
            elif op == "sub":
                adj[ch[0]] = adj[ch[0]] + a
                adj[ch[1]] = adj[ch[1]] - a
            elif op == "mul":
                adj[ch[0]] = adj[ch[0]] + a * vals[ch[1]]
                adj[ch[1]] = adj[ch[1]] + a * vals[ch[0]]
            elif op == "div":
                q = a / vals[ch[1]]
                adj[ch[0]] = adj[ch[0]] + q
                adj[ch[1]] = adj[ch[1]] - q * vals[k]
            elif op == "neg":
                adj[ch[0]] = adj[ch[0]] - a
            elif op == "exp":
                adj[ch[0]] = adj[ch[0]] + a * vals[k]
            elif op == "log":
                adj[ch[0]] = adj[ch[0]] + a / vals[ch[0]]
            elif op == "pow":
                p = self.values[k]
                if p != 0.0:
                    d = p if p == 1.0 else p * _power(vals[ch[0]], p - 1.0)
                    adj[ch[0]] = adj[ch[0]] + a * d
        out = vals[-1]
        return (float(out) if np.ndim(out) == 0 else out), grads

    def gradient(self, point, n_vars: int | None = None):
        n_vars = len(point) if n_vars is None else n_vars
        value, grads = self.partials(point)
        shape = (n_vars,) + np.shape(value)
        g = np.zeros(shape)
        for i, d in grads.items():
            if i >= n_vars:
                raise IndexOutOfRange(f"variable {i} outside declared count {n_vars}")
            g[i] = d
        return g


def _power(base, p: float):
    b = np.asarray(base)
    if p < 0 and np.any(b == 0):
        raise DomainError("zero raised to a negative power")
    if not float(p).is_integer() and np.any(b < 0):
        raise DomainError("negative base with fractional exponent")
    if p == 2.0:
        return base * base
    if p == 3.0:
        return base * base * base
    return base ** p


def evaluate(expr: Expression, point: Sequence[float]):
    """Value of ``expr`` at ``point``."""
    return Tape(expr).evaluate(point)


def gradient(expr: Expression, point: Sequence[float], n_vars: int | None = None) -> np.ndarray:
    """Reverse-mode gradient of ``expr`` with respect to every variable.

    The result has ``n_vars`` entries (default ``len(point)``).
    """
    return Tape(expr).gradient(point, n_vars)


# ----------------------------------------------------------------------------
# prefix notation

def to_prefix(expr: Expression, names: Mapping[int, str] | Sequence[str] | None = None) -> str:
    """Render ``expr`` as an s-expression, e.g. ``(mul x (exp (sub x 1.0)))``."""

    def name(i):
        if names is None:
            return f"x[{i}]"
        return names[i]

    out: dict[int, str] = {}
    for node in _postorder(expr):
        if node.op == "const":
            s = repr(node.value)
        elif node.op == "var":
            s = name(node.index)
        elif node.op == "pow":
            s = f"(pow {out[id(node.args[0])]} {node.value!r})"
        else:
            s = "(" + " ".join([node.op] + [out[id(c)] for c in node.args]) + ")"
        out[id(node)] = s
    return out[id(expr)]


_TOKEN = re.compile(r"\(|\)|[^\s()]+")
_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$|^[+-]?(inf|nan)$")


def parse_prefix(text: str, names: Mapping[str, int] | None = None) -> Expression:
    """Parse the s-expression produced by :func:`to_prefix`.

    ``names`` maps symbol names to variable indices; without it only the
    ``x[i]`` form is accepted.
    """
    tokens = _TOKEN.findall(text)
    if not tokens:
        raise ModelFormatError("empty expression")
    pos = 0

    def atom(tok):
        if _NUMBER.match(tok):
            return const(float(tok))
        if names is not None and tok in names:
            return var(names[tok])
        m = re.fullmatch(r"x\[(\d+)\]", tok)
        if m:
            return var(int(m.group(1)))
        raise ModelFormatError(f"unknown symbol {tok!r}")

    def parse():
        nonlocal pos
        if pos >= len(tokens):
            raise ModelFormatError("unexpected end of expression")
        tok = tokens[pos]
        pos += 1
        if tok == ")":
            raise ModelFormatError("unexpected ')'")
        if tok != "(":
            return atom(tok)
        op = tokens[pos]
        pos += 1
        args = []
        while pos < len(tokens) and tokens[pos] != ")":
            args.append(parse())
        if pos >= len(tokens):
            raise ModelFormatError("missing ')'")
        pos += 1
        if op == "pow":
            if len(args) != 2 or args[1].op != "const":
                raise ModelFormatError("pow takes a base and a constant exponent")
            return Expression("pow", (args[0],), value=args[1].value)
        if op in UNARY and len(args) == 1:
            return Expression(op, tuple(args))
        if op in BINARY and len(args) == 2:
            return Expression(op, tuple(args))
        raise ModelFormatError(f"bad operator or arity: {op!r} with {len(args)} args")

    expr = parse()
    if pos != len(tokens):
        raise ModelFormatError("trailing tokens after expression")
    return expr


def is_constant(expr: Expression) -> bool:
    return not expr.variables()


# ----------------------------------------------------------------------------
# symbolic derivatives

def _is(e: Expression, v: float) -> bool:
    return e.op == "const" and e.value == v


def _add(a, b):
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if a.op == b.op == "const":
        return const(a.value + b.value)
    return Expression("add", (a, b))


def _sub(a, b):
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return _neg(b)
    if a.op == b.op == "const":
        return const(a.value - b.value)
    return Expression("sub", (a, b))


def _neg(a):
    if a.op == "const":
        return const(-a.value)
    if a.op == "neg":
        return a.args[0]
    return Expression("neg", (a,))


def _mul(a, b):
    if _is(a, 0.0) or _is(b, 0.0):
        return const(0.0)
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if a.op == b.op == "const":
        return const(a.value * b.value)
    return Expression("mul", (a, b))


def _div(a, b):
    if _is(a, 0.0):
        return const(0.0)
    if _is(b, 1.0):
        return a
    return Expression("div", (a, b))


def diff(expr: Expression, index: int) -> Expression:
    """Symbolic derivative of ``expr`` with respect to variable ``index``.

    Constant subterms are folded, so derivatives of the small templates used
    by the transcription stay small enough to differentiate again.
    """
    memo: dict[int, Expression] = {}
    for node in _postorder(expr):
        op, a = node.op, node.args
        if op == "const":
            d = const(0.0)
        elif op == "var":
            d = const(1.0 if node.index == index else 0.0)
        else:
            da = [memo[id(c)] for c in a]
            if op == "add":
                d = _add(da[0], da[1])
            elif op == "sub":
                d = _sub(da[0], da[1])
            elif op == "neg":
                d = _neg(da[0])
            elif op == "mul":
                d = _add(_mul(da[0], a[1]), _mul(a[0], da[1]))
            elif op == "div":
                d = _sub(_div(da[0], a[1]), _div(_mul(a[0], da[1]), Expression("pow", (a[1],), value=2.0)))
            elif op == "exp":
                d = _mul(node, da[0])
            elif op == "log":
                d = _div(da[0], a[0])
            elif op == "pow":
                p = node.value
                if p == 0.0:
                    d = const(0.0)
                elif p == 1.0:
                    d = da[0]
                elif p == 2.0:
                    d = _mul(_mul(const(2.0), a[0]), da[0])
                else:
                    d = _mul(_mul(const(p), Expression("pow", (a[0],), value=p - 1.0)), da[0])
            else:  # pragma: no cover
                raise ValueError(f"unknown op {op!r}")
        memo[id(node)] = d
    return memo[id(expr)]


__all__ = [
    "Expression",
    "Tape",
    "as_expr",
    "const",
    "diff",
    "evaluate",
    "exp",
    "gradient",
    "is_constant",
    "log",
    "parse_prefix",
    "to_prefix",
    "var",
]
