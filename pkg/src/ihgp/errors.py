"""Exception hierarchy shared by all modules."""


class IhgpError(Exception):
    """Base class; ``kind`` is the short machine-readable tag used by the CLI."""

    kind = "error"


class ParameterDomainError(IhgpError, ValueError):
    kind = "parameter-domain"


class StabilityError(IhgpError):
    kind = "stability"


class ConvergenceError(IhgpError):
    kind = "convergence"

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NumericalDegeneracyError(IhgpError):
    kind = "numerical-degeneracy"


class ConditioningError(IhgpError):
    kind = "conditioning"


class ConfigurationError(IhgpError, ValueError):
    kind = "configuration"


class InputError(IhgpError, ValueError):
    kind = "input"
