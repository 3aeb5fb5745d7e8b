"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GmcexpError(Exception):
    exit_code = 1


class ParameterError(GmcexpError, ValueError):
    """Invalid model or configuration parameters."""

    exit_code = 2


class PreconditionError(ParameterError):
    """An operation was called outside its domain of validity."""


class FitError(ParameterError):
    """The ε ladder cannot support a slope fit."""


class ResourceError(GmcexpError):
    """Requested grid exceeds the configured memory budget."""

    exit_code = 3


class NotPositiveDefiniteError(GmcexpError, ArithmeticError):
    """Covariance could not be factored within the jitter cap."""

    exit_code = 4

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
