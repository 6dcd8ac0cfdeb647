"""Multi-stage disjunctive dynamic models and their propositional logic.

A :class:`DagdpModel` holds a fixed horizon split into stages.  Each stage
owns a disjunction: a list of :class:`Disjunct` objects, one of which is
selected per stage.  A configuration is therefore just the tuple of selected
disjunct indices, a :class:`BooleanAssignment` (1-based, as in ``(1, 2, 2)``).

Expressions inside a model index one shared variable namespace, laid out as

    states | controls | algebraic variables | parameters | time

so that ``model.namespace_size`` is the length of a point vector and the last
slot is always the time symbol.  :meth:`DagdpModel.symbols` returns the
matching :class:`~dyngdp.expr.Expression` for every name.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

from .errors import InvalidAtom, LatticeTooLarge
from .expr import Expression, var

MAX_ENUMERATION = 10**6


@dataclass(frozen=True)
class StateVar:
    name: str
    lower: float
    upper: float
    initial: float


@dataclass(frozen=True)
class ControlVar:
    name: str
    lower: float
    upper: float
    fixed_initial: float | None = None


@dataclass(frozen=True)
class AlgebraicVar:
    name: str
    lower: float = -math.inf
    upper: float = math.inf


@dataclass(frozen=True)
class Parameter:
    name: str
    lower: float = -math.inf
    upper: float = math.inf


@dataclass(frozen=True)
class Disjunct:
    """One dynamic mode: a right-hand side per state, plus optional
    algebraic equalities that hold while the mode is active."""

    rhs: tuple[Expression, ...]
    algebraic: tuple[Expression, ...] = ()
    name: str = ""


# ----------------------------------------------------------------------------
# propositions


@dataclass(frozen=True)
class Proposition:
    """Formula over the atoms ``Y[stage, disjunct]`` (both 1-based).

    ``op`` is ``atom``, ``not``, ``and``, ``or``, ``xor`` (exactly one),
    ``implies`` or ``iff``.  ``and``/``or``/``xor`` take any number of
    operands; an empty ``or`` is false and an empty ``and`` is true.
    """

    op: str
    args: tuple["Proposition", ...] = ()
    stage: int = 0
    disjunct: int = 0

    def __invert__(self):
        return Not(self)

    def __and__(self, other):
        return And(self, other)

    def __or__(self, other):
        return Or(self, other)

    def __rshift__(self, other):
        return Implies(self, other)

    def atoms(self) -> Iterator["Proposition"]:
        if self.op == "atom":
            yield self
        for a in self.args:
            yield from a.atoms()

    def __str__(self):
        if self.op == "atom":
            return f"Y[{self.stage},{self.disjunct}]"
        return "(" + " ".join([self.op] + [str(a) for a in self.args]) + ")"


def Y(stage: int, disjunct: int) -> Proposition:
    return Proposition("atom", stage=int(stage), disjunct=int(disjunct))


def Not(p: Proposition) -> Proposition:
    return Proposition("not", (p,))


def And(*ps: Proposition) -> Proposition:
    return Proposition("and", tuple(ps))


def Or(*ps: Proposition) -> Proposition:
    return Proposition("or", tuple(ps))


def ExactlyOne(*ps: Proposition) -> Proposition:
    return Proposition("xor", tuple(ps))


def Implies(a: Proposition, b: Proposition) -> Proposition:
    return Proposition("implies", (a, b))


def Iff(a: Proposition, b: Proposition) -> Proposition:
    return Proposition("iff", (a, b))


# ----------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class DagdpModel:
    stage_times: tuple[float, ...]
    states: tuple[StateVar, ...]
    controls: tuple[ControlVar, ...]
    disjunctions: tuple[tuple[Disjunct, ...], ...]
    propositions: tuple[Proposition, ...] = ()
    integrand: Expression | None = None
    # objective = objective_scale * integral of the integrand over the horizon
    objective_scale: float = 1.0
    algebraics: tuple[AlgebraicVar, ...] = ()
    parameters: tuple[Parameter, ...] = ()
    constraints: tuple[Expression, ...] = ()
    name: str = "model"
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        t = self.stage_times
        if len(t) < 2:
            raise ValueError("need at least one stage")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("stage times must be strictly increasing")
        if len(self.disjunctions) != len(t) - 1:
            raise ValueError("one disjunction per stage required")
        for k, disj in enumerate(self.disjunctions, start=1):
            if not disj:
                raise ValueError(f"stage {k} has no disjuncts")
            for d in disj:
                if len(d.rhs) != len(self.states):
                    raise ValueError("each disjunct needs one rhs per state")
        for s in self.states:
            if not s.lower <= s.initial <= s.upper:
                raise ValueError(f"initial value of {s.name} outside its bounds")
        for p in self.propositions:
            check_atoms(p, self.disjunct_counts)
        n = self.namespace_size
        exprs = [e for disj in self.disjunctions for d in disj for e in d.rhs + d.algebraic]
        exprs += list(self.constraints)
        if self.integrand is not None:
            exprs.append(self.integrand)
        for e in exprs:
            if e.variables() and max(e.variables()) >= n:
                raise ValueError("expression references an undeclared variable")

    @property
    def n_stages(self) -> int:
        return len(self.stage_times) - 1

    @property
    def disjunct_counts(self) -> tuple[int, ...]:
        return tuple(len(d) for d in self.disjunctions)

    @property
    def namespace(self) -> tuple[str, ...]:
        return (
            tuple(s.name for s in self.states)
            + tuple(c.name for c in self.controls)
            + tuple(a.name for a in self.algebraics)
            + tuple(p.name for p in self.parameters)
            + ("t",)
        )

    @property
    def namespace_size(self) -> int:
        return len(self.namespace)

    @property
    def time_index(self) -> int:
        return self.namespace_size - 1

    def symbols(self) -> dict[str, Expression]:
        return symbols_for(
            [s.name for s in self.states],
            [c.name for c in self.controls],
            [a.name for a in self.algebraics],
            [p.name for p in self.parameters],
        )


def symbols_for(states=(), controls=(), algebraics=(), parameters=()) -> dict[str, Expression]:
    """Variables for a namespace laid out like :attr:`DagdpModel.namespace`."""
    names = list(states) + list(controls) + list(algebraics) + list(parameters) + ["t"]
    if len(set(names)) != len(names):
        raise ValueError("duplicate variable names")
    return {n: var(i) for i, n in enumerate(names)}


# ----------------------------------------------------------------------------
# assignments and logic


class BooleanAssignment(tuple):
    """Selected disjunct per stage, 1-based: ``BooleanAssignment((1, 2, 2))``.

    Exactly one Boolean per stage is true by construction, so the
    exclusive-or over each disjunction never needs checking.
    """

    def __new__(cls, modes: Sequence[int]):
        modes = tuple(int(m) for m in modes)
        if any(m < 1 for m in modes):
            raise ValueError("disjunct indices are 1-based")
        return super().__new__(cls, modes)

    def value(self, stage: int, disjunct: int) -> bool:
        return self[stage - 1] == disjunct

    def __repr__(self):
        return f"BooleanAssignment({tuple(self)!r})"


def check_atoms(prop: Proposition, counts: Sequence[int]) -> None:
    for a in prop.atoms():
        if not 1 <= a.stage <= len(counts) or not 1 <= a.disjunct <= counts[a.stage - 1]:
            raise InvalidAtom(f"atom Y[{a.stage},{a.disjunct}] out of range")


def evaluate_proposition(prop: Proposition, assignment: Sequence[int]) -> bool:
    """Truth value of ``prop`` when stage ``s`` selects ``assignment[s-1]``."""
    op = prop.op
    if op == "atom":
        if not 1 <= prop.stage <= len(assignment):
            raise InvalidAtom(f"stage {prop.stage} out of range")
        if prop.disjunct < 1:
            raise InvalidAtom(f"disjunct {prop.disjunct} out of range")
        return assignment[prop.stage - 1] == prop.disjunct
    vals = [evaluate_proposition(a, assignment) for a in prop.args]
    if op == "not":
        return not vals[0]
    if op == "and":
        return all(vals)
    if op == "or":
        return any(vals)
    if op == "xor":
        return sum(vals) == 1
    if op == "implies":
        return (not vals[0]) or vals[1]
    if op == "iff":
        return vals[0] == vals[1]
    raise ValueError(f"unknown connective {op!r}")


def is_feasible_configuration(model: DagdpModel, assignment: Sequence[int]) -> bool:
    if len(assignment) != model.n_stages:
        return False
    for m, n in zip(assignment, model.disjunct_counts):
        if not 1 <= m <= n:
            return False
    return all(evaluate_proposition(p, assignment) for p in model.propositions)


def lattice_size(model: DagdpModel) -> int:
    return math.prod(model.disjunct_counts)


def enumerate_feasible(model: DagdpModel, limit: int = MAX_ENUMERATION) -> list[BooleanAssignment]:
    """All logically feasible assignments in lexicographic order."""
    if lattice_size(model) > limit:
        raise LatticeTooLarge(f"{lattice_size(model)} configurations exceed limit {limit}")
    ranges = [range(1, n + 1) for n in model.disjunct_counts]
    return [
        BooleanAssignment(a)
        for a in itertools.product(*ranges)
        if all(evaluate_proposition(p, a) for p in model.propositions)
    ]
