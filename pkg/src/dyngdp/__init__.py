"""Dynamic generalized disjunctive programs solved by discrete steepest descent.

A :class:`DagdpModel` describes a staged ODE system where each stage picks one
mode (disjunct) subject to logic propositions.  Fixing the modes gives a
collocation NLP (:func:`transcribe`) solved by :func:`solve`; the mode choice
is searched over an integer lattice (:func:`build_map`, :func:`solve_ldsda`)
or by brute force (:func:`solve_enumerate`).
"""

__version__ = "0.1.0"

from .benchmarks import BenchmarkSpec, build_benchmark, multi_stage_model, three_stage_model
from .collocation import CollocationScheme, simulate_collocation, transcribe
from .errors import (
    DomainError,
    DyngdpError,
    IndexOutOfRange,
    InfeasibleConfiguration,
    InfeasibleStart,
    InvalidAtom,
    InvalidSpec,
    LatticeTooLarge,
    OutOfBounds,
    UnsupportedScheme,
)
from .expr import Expression, diff, evaluate, exp, gradient, log, var
from .external import ExternalMap, build_map, decode, encode
from .model import (
    And,
    BooleanAssignment,
    ControlVar,
    DagdpModel,
    Disjunct,
    ExactlyOne,
    Iff,
    Implies,
    Not,
    Or,
    StateVar,
    Y,
    enumerate_feasible,
    is_feasible_configuration,
)
from .nlp import DiscretizedNlp
from .search import SearchOutcome, SearchSettings, directions, lattice_search, neighbors, solve_enumerate, solve_ldsda
from .simulate import initial_guess, simulate
from .solver import SolverSettings, SolveResult, solve
