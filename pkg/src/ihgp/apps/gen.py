"""Synthetic data sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterDomainError


@dataclass(frozen=True, eq=False)
class SincData:
    x: np.ndarray
    y: np.ndarray
    f: np.ndarray
    mode: str


def sinc(x):
    """``sin(pi x) / (pi x)`` with ``sinc(0) = 1``."""
    return np.sinc(x)


def gen_sinc(n: int, seed: int = 0, mode: str = "regression", noise_var: float = 0.1,
             x_min: float = 0.0, x_max: float = 12.0) -> SincData:
    """Samples of ``sinc(x - 6)`` on an equidistant grid.

    ``regression`` adds Gaussian noise of variance ``noise_var``;
    ``classification`` thresholds the noisy values to labels in {-1, +1};
    ``poisson`` draws counts with rate ``exp(sinc(x - 6))``.
    """
    if int(n) != n or n < 1:
        raise ParameterDomainError(f"n must be a positive integer, got {n}")
    if not noise_var > 0:
        raise ParameterDomainError(f"noise variance must be positive, got {noise_var}")
    if not x_max > x_min:
        raise ParameterDomainError("x_max must exceed x_min")
    rng = np.random.default_rng(seed)
    x = np.linspace(x_min, x_max, int(n))
    f = sinc(x - 6.0)
    if mode == "regression":
        y = f + np.sqrt(noise_var) * rng.standard_normal(x.size)
    elif mode == "classification":
        y = np.where(f + np.sqrt(noise_var) * rng.standard_normal(x.size) >= 0.0, 1.0, -1.0)
    elif mode == "poisson":
        y = rng.poisson(np.exp(f)).astype(float)
    else:
        raise ParameterDomainError(f"unknown mode {mode!r}")
    return SincData(x=x, y=y, f=f, mode=mode)
