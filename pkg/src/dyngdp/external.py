"""Integer external variables for ordered disjunctions.

Two schemes map a Boolean assignment to a point of an integer lattice.

``ordinal``
    One coordinate per stage; coordinate ``s`` is the selected disjunct of
    stage ``s``.

``transition``
    For models whose modes run in a fixed chain ``1 -> 2 -> ... -> D``, one
    coordinate per transition.  Coordinate value ``c < S`` puts the transition
    at stage ``c + 1``; ``c = S`` means the transition never happens.  So for
    three modes and ``S = 4`` the point ``(1, 2)`` decodes to modes
    ``(1, 2, 3, 3)``.

Decoding never raises for logically infeasible points; it returns ``None`` so
a search can skip them without building a subproblem.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Sequence

from .errors import LatticeTooLarge, OutOfBounds, UnsupportedScheme
from .model import (
    MAX_ENUMERATION,
    BooleanAssignment,
    DagdpModel,
    enumerate_feasible,
    is_feasible_configuration,
    lattice_size,
)

SCHEMES = ("ordinal", "transition")

LatticePoint = tuple[int, ...]


@dataclass(frozen=True)
class ExternalMap:
    scheme: str
    model: DagdpModel = field(repr=False)
    lower: LatticePoint
    upper: LatticePoint
    # transition scheme: (from_mode, to_mode) per coordinate
    transitions: tuple[tuple[int, int], ...] = ()

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def sentinel(self) -> int:
        """Coordinate value meaning "this transition never happens"."""
        return self.model.n_stages

    @property
    def size(self) -> int:
        n = 1
        for lo, hi in zip(self.lower, self.upper):
            n *= hi - lo + 1
        return n

    def contains(self, z: Sequence[int]) -> bool:
        return len(z) == self.dimension and all(
            lo <= c <= hi for c, lo, hi in zip(z, self.lower, self.upper))

    def points(self) -> Iterator[LatticePoint]:
        """Every lattice point in lexicographic order."""
        return itertools.product(*[range(lo, hi + 1) for lo, hi in zip(self.lower, self.upper)])


def build_map(model: DagdpModel, scheme: str) -> ExternalMap:
    if scheme == "ordinal":
        counts = model.disjunct_counts
        return ExternalMap("ordinal", model, (1,) * len(counts), tuple(counts))
    if scheme != "transition":
        raise UnsupportedScheme(f"unknown scheme {scheme!r}")

    counts = set(model.disjunct_counts)
    if len(counts) != 1:
        raise UnsupportedScheme("transition scheme needs the same modes at every stage")
    n_modes = counts.pop()
    S = model.n_stages
    emap = ExternalMap(
        "transition", model, (1,) * (n_modes - 1), (S,) * (n_modes - 1),
        tuple((k, k + 1) for k in range(1, n_modes)),
    )
    # the chain must describe exactly the model's feasible set
    if emap.size <= MAX_ENUMERATION and lattice_size(model) <= MAX_ENUMERATION:
        image = {_transition_modes(emap, z) for z in emap.points()} - {None}
        image = {m for m in image if is_feasible_configuration(model, m)}
        if image != set(enumerate_feasible(model)):
            raise UnsupportedScheme("the model's modes do not follow a single ordered chain")
    return emap


def _transition_modes(emap: ExternalMap, z: Sequence[int]) -> BooleanAssignment | None:
    S = emap.sentinel
    real = [c for c in z if c < S]
    # transitions happen in chain order, at distinct stages, and a suppressed
    # transition suppresses all later ones
    if any(c < S for c in z[len(real):]) or any(b <= a for a, b in zip(real, real[1:])):
        return None
    return BooleanAssignment(
        1 + sum(1 for c in real if c + 1 <= s) for s in range(1, S + 1))


def decode(emap: ExternalMap, z: Sequence[int]) -> BooleanAssignment | None:
    """Assignment for lattice point ``z``, or ``None`` when it is infeasible."""
    z = tuple(int(c) for c in z)
    if not emap.contains(z):
        raise OutOfBounds(f"{format_point(z)} is outside the lattice "
                          f"[{format_point(emap.lower)}] .. [{format_point(emap.upper)}]")
    if emap.scheme == "ordinal":
        modes = BooleanAssignment(z)
    else:
        modes = _transition_modes(emap, z)
    if modes is None or not is_feasible_configuration(emap.model, modes):
        return None
    return modes


def encode(emap: ExternalMap, assignment: Sequence[int]) -> LatticePoint | None:
    """Lattice point decoding to ``assignment``; ``None`` if there is none."""
    modes = tuple(int(m) for m in assignment)
    if emap.scheme == "ordinal":
        z = modes
    else:
        S = emap.sentinel
        z = tuple(
            next((s - 1 for s in range(2, S + 1) if modes[s - 1] > k), S)
            for k, _ in emap.transitions
        )
    if not emap.contains(z) or decode(emap, z) != modes:
        return None
    return z


def feasible_points(emap: ExternalMap, limit: int = MAX_ENUMERATION) -> list[LatticePoint]:
    if emap.size > limit:
        raise LatticeTooLarge(f"{emap.size} lattice points exceed limit {limit}")
    return [z for z in emap.points() if decode(emap, z) is not None]


def format_point(z: Sequence[int]) -> str:
    return ",".join(str(int(c)) for c in z)


def parse_point(text: str) -> LatticePoint:
    try:
        return tuple(int(c) for c in text.replace(" ", "").strip("()").split(","))
    except ValueError:
        raise ValueError(f"cannot read lattice point {text!r}") from None
