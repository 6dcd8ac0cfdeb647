"""The two mode-switching benchmark problems.

``three-stage``: one state, two modes, three unit-length stages, mode 2 may
only follow mode 1 and mode 1 never returns once mode 2 starts.

``multi-stage``: the same with a third mode whose dynamics depend explicitly
on time, giving the sequence 1 -> 2 -> 3 over ``S`` unit stages.

Both maximise the integral of ``x**2`` (objective ``-integral``), start at
``x(0) = 1`` and keep ``x`` in ``[0, 10]`` and ``u`` in ``[-4, 4]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .collocation import CollocationScheme
from .errors import InvalidSpec
from .expr import exp
from .model import (
    ControlVar,
    DagdpModel,
    Disjunct,
    Implies,
    Not,
    Or,
    StateVar,
    Y,
    symbols_for,
)

PROBLEMS = ("three-stage", "multi-stage")
METHODS = ("ldsda-l2", "ldsda-linf", "enumerate")
X_BOUNDS = (0.0, 10.0)
U_BOUNDS = (-4.0, 4.0)


def sequencing(n_stages: int, before: int, after: int) -> list:
    """Mode ``after`` needs an earlier ``before`` and forbids ``before`` later on."""
    props = []
    for s in range(1, n_stages + 1):
        earlier = Or(*[Y(k, before) for k in range(1, s)])
        later = Or(*[Y(k, before) for k in range(s + 1, n_stages + 1)])
        props.append(Implies(Y(s, after), earlier))
        props.append(Implies(Y(s, after), Not(later)))
    return props


def _modes():
    sym = symbols_for(["x"], ["u"])
    x, u, t = sym["x"], sym["u"], sym["t"]
    fast = Disjunct((-x * exp(x - 1) + u,), name="mode1")
    # same dynamics as ``fast``, written the way the multi-stage model states it
    fast_quotient = Disjunct((-x / exp(1 - x) + u,), name="mode1")
    cubic = Disjunct(((0.5 * x**3 + u) / 20,), name="mode2")
    timed = Disjunct(((x**2 + u) / (t + 20),), name="mode3")
    return x, fast, fast_quotient, cubic, timed


def three_stage_model(fix_first_control: bool = True) -> DagdpModel:
    x, fast, _, cubic, _ = _modes()
    return DagdpModel(
        stage_times=(0.0, 1.0, 2.0, 3.0),
        states=(StateVar("x", *X_BOUNDS, initial=1.0),),
        controls=(ControlVar("u", *U_BOUNDS, fixed_initial=4.0 if fix_first_control else None),),
        disjunctions=((fast, cubic),) * 3,
        propositions=tuple(sequencing(3, 1, 2)),
        integrand=x**2,
        objective_scale=-1.0,
        name="three-stage",
    )


def multi_stage_model(n_stages: int) -> DagdpModel:
    if n_stages < 1:
        raise InvalidSpec("need at least one stage")
    x, _, mode1, cubic, timed = _modes()
    return DagdpModel(
        stage_times=tuple(float(s) for s in range(n_stages + 1)),
        states=(StateVar("x", *X_BOUNDS, initial=1.0),),
        controls=(ControlVar("u", *U_BOUNDS),),
        disjunctions=((mode1, cubic, timed),) * n_stages,
        propositions=tuple(sequencing(n_stages, 1, 2) + sequencing(n_stages, 2, 3)),
        integrand=x**2,
        objective_scale=-1.0,
        name=f"multi-stage-{n_stages}",
    )


@dataclass
class BenchmarkSpec:
    problem: str = "three-stage"
    stages: int = 9
    scheme: CollocationScheme = field(default_factory=CollocationScheme)
    method: str = "ldsda-l2"
    reformulation: str | None = None
    start: tuple[int, ...] | None = None
    time_limit: float | None = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise InvalidSpec(f"unknown problem {self.problem!r}")
        if self.method not in METHODS:
            raise InvalidSpec(f"unknown method {self.method!r}")
        if self.problem == "multi-stage" and self.stages < 2:
            raise InvalidSpec("multi-stage problem needs at least two stages")
        if self.reformulation is None:
            self.reformulation = "ordinal" if self.problem == "three-stage" else "transition"
        if self.reformulation not in ("ordinal", "transition"):
            raise InvalidSpec(f"unknown reformulation {self.reformulation!r}")
        if self.time_limit is None:
            self.time_limit = 900.0 if self.problem == "three-stage" else 3600.0
        if self.start is None:
            self.start = default_start(self.problem, self.stages, self.reformulation)
        self.start = tuple(int(c) for c in self.start)


def default_start(problem: str, stages: int, reformulation: str) -> tuple[int, ...]:
    n = 3 if problem == "three-stage" else stages
    if reformulation == "ordinal":
        return (1,) * n
    if problem == "three-stage":
        return (n,)  # the single transition never happens: all stages in mode 1
    return (1, 2)


def build_benchmark(spec: BenchmarkSpec) -> DagdpModel:
    if spec.problem == "three-stage":
        return three_stage_model()
    return multi_stage_model(spec.stages)
