"""Exception hierarchy shared by all modules."""


class MlmcError(Exception):
    """Base class for every error raised by this package."""


class DomainError(MlmcError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class InputError(MlmcError, ValueError):
    """Invalid or inconsistent input data."""


class ResourceError(MlmcError):
    """A configured size cap would be exceeded."""


class NumericalError(MlmcError, ArithmeticError):
    """A numerical procedure failed (factorization, SPD violation, ...)."""


class SPDViolationError(NumericalError):
    """A matrix expected to be symmetric positive definite is not."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration limit."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InsufficientDataError(MlmcError):
    """Too few data points for a fit."""


class ConfigError(MlmcError):
    """Malformed or invalid experiment configuration."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
