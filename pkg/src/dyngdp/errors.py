"""Exception types raised across the package."""


class DyngdpError(Exception):
    """Base class for all package errors."""


class IndexOutOfRange(DyngdpError, IndexError):
    """An expression references a variable index outside the supplied point."""


class DomainError(DyngdpError, ArithmeticError):
    """Division by zero, log of a nonpositive value, or a similar domain fault."""


class InvalidAtom(DyngdpError, ValueError):
    """A proposition atom references a stage or disjunct that does not exist."""


class LatticeTooLarge(DyngdpError):
    """The configuration space is too large to enumerate."""


class InfeasibleConfiguration(DyngdpError, ValueError):
    """A Boolean assignment violates the model's logic propositions."""


class UnsupportedOrder(DyngdpError, ValueError):
    """Requested collocation order is outside the supported range."""


class DuplicateNodes(DyngdpError, ValueError):
    """Interpolation nodes are not distinct."""


class NonFiniteState(DyngdpError, FloatingPointError):
    """Numerical integration produced a non-finite state."""


class UnsupportedScheme(DyngdpError, ValueError):
    """The requested external-variable scheme does not apply to the model."""


class OutOfBounds(DyngdpError, ValueError):
    """A lattice point lies outside the external-variable bounds."""


class InfeasibleStart(DyngdpError, ValueError):
    """The search start point does not decode to a feasible configuration."""


class ModelFormatError(DyngdpError, ValueError):
    """A model file could not be parsed."""


class InvalidSpec(DyngdpError, ValueError):
    """A benchmark specification is malformed."""
