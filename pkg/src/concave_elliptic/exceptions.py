"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`ConcaveEllipticError`, so callers can separate library failures from
programming errors.
"""


class ConcaveEllipticError(Exception):
    """Base class for all package errors."""


class NonPositiveMetric(ConcaveEllipticError, ValueError):
    """The background metric is not positive definite."""


class NotHermitian(ConcaveEllipticError, ValueError):
    """A matrix expected to be Hermitian is not."""


class IndexOutOfRange(ConcaveEllipticError, IndexError):
    """A symmetric-function index lies outside ``0..n``."""


class DimensionTooSmall(ConcaveEllipticError, ValueError):
    """The operation needs a larger complex dimension."""


class NotAdmissible(ConcaveEllipticError, ValueError):
    """Eigenvalues lie outside the admissible cone of an operator.

    ``failing`` names the defining inequality that fails (for example
    ``"sigma_2"`` or ``"theta"``) when it is known.
    """

    def __init__(self, msg, failing=None, margin=None):
        super().__init__(msg)
        self.failing = failing
        self.margin = margin


class OutOfRange(ConcaveEllipticError, ValueError):
    """A value lies outside the range of the operator."""


class NotCohomologicalType(ConcaveEllipticError, ValueError):
    """The operator has no cohomological phase data."""


class GeometryMismatch(ConcaveEllipticError, ValueError):
    """Fields or classes live on different torus geometries."""


class WrongArity(ConcaveEllipticError, ValueError):
    """Wrong number of arguments for a multilinear pairing."""


class NonPositiveQuotient(ConcaveEllipticError, ValueError):
    """An intersection quotient that must be positive is not."""


class SolverError(ConcaveEllipticError, RuntimeError):
    """Base class for failures of the nonlinear solver.

    ``state`` holds the last iterate as a :class:`SolveResult` when one exists.
    """

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


class NotAdmissibleInitialization(SolverError):
    pass


class LineSearchStalled(SolverError):
    pass


class MaxIterations(SolverError):
    pass


class PathTruncated(SolverError):
    """A continuation path failed at ``t_fail``; ``completed`` holds the prefix."""

    def __init__(self, msg, t_fail, completed, cause=None):
        super().__init__(msg)
        self.t_fail = t_fail
        self.completed = completed
        self.cause = cause
