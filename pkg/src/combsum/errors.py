"""Exception types shared across the package."""


class CombsumError(Exception):
    """Base class for every error raised by combsum."""


class RangeError(CombsumError, OverflowError):
    """A moment or intermediate value would overflow double precision."""


class TiltDomainError(CombsumError, ValueError):
    """An m.g.f. argument lies outside the analyticity domain of some entry."""

    def __init__(self, message, max_abs_z):
        super().__init__(message)
        self.max_abs_z = max_abs_z


class CenteringError(CombsumError, ValueError):
    """A requested ensemble cannot satisfy the zero row/column mean condition."""

    def __init__(self, message, axis=None, index=None, residual=None):
        super().__init__(message)
        self.axis = axis
        self.index = index
        self.residual = residual


class DegenerateEnsembleError(CombsumError, ValueError):
    """B_n is zero, so the sum cannot be normalized."""


class FeasibilityError(CombsumError, ValueError):
    """A size or cost guard rejected an exact computation."""

    def __init__(self, message, cost=None):
        super().__init__(message)
        self.cost = cost


class ZoneExceededError(CombsumError, ValueError):
    """The saddlepoint target is not reachable inside the tilt domain."""

    def __init__(self, message, m_edge, h_edge):
        super().__init__(message)
        self.m_edge = m_edge
        self.h_edge = h_edge


class NumericalDegeneracyError(CombsumError, ArithmeticError):
    """The tilted variance came out non-positive."""
