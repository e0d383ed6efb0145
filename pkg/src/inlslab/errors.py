"""Exception hierarchy shared by every module."""


class InlsError(Exception):
    """Base class for all package errors."""


class ParameterError(InlsError, ValueError):
    """Invalid or inconsistent equation/grid/config parameters."""


class ResamplingError(InlsError, ValueError):
    """A rescaled field would need values outside the grid support."""


class SolverError(InlsError, RuntimeError):
    """An iterative solver failed to converge.

    ``residual`` carries the last residual reached, when known.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NumericalError(InlsError, RuntimeError):
    """Linear solve failure or non-finite values during time stepping."""


class ConstructionError(InlsError, ValueError):
    """A scenario or cutoff object could not be built with its invariants."""


class PreconditionError(InlsError, ValueError):
    """A precondition of a bound, checked at runtime, does not hold."""


class InsufficientDataError(InlsError, ValueError):
    """Not enough samples (e.g. checkpoints) for the requested check."""


class SearchError(InlsError, RuntimeError):
    """A parameter scan ended without finding an admissible value."""
