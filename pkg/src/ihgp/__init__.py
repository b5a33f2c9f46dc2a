"""Infinite-horizon Gaussian process inference for long and streaming time series."""

from ._backend import BACKEND
from .errors import (
    ConditioningError,
    ConfigurationError,
    ConvergenceError,
    IhgpError,
    InputError,
    NumericalDegeneracyError,
    ParameterDomainError,
    StabilityError,
)

__version__ = "0.1.0"
