"""Exception hierarchy; the CLI maps these onto exit codes."""


class CuspStatsError(Exception):
    """Base class for library errors."""

    exit_code = 1


class DomainError(CuspStatsError, ValueError):
    """Input outside the domain of an operation (exit code 1)."""

    exit_code = 1


class ConvergenceError(CuspStatsError):
    """Iterative solver did not reach its tolerance."""

    exit_code = 2

    def __init__(self, msg, residual=None, eta=None):
        super().__init__(msg)
        self.residual = residual
        self.eta = eta


class PrecisionError(CuspStatsError):
    """Estimated numerical error above the requested tolerance (exit code 2)."""

    exit_code = 2

    def __init__(self, msg, value=None, error=None):
        super().__init__(msg)
        self.value = value
        self.error = error


class AmbiguousBranchError(CuspStatsError):
    exit_code = 2
