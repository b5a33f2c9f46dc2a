"""Log-Gaussian Cox process intensity estimation from event times.

Events are binned on an equidistant grid and each bin count is modelled as
Poisson with rate ``exp(f(t))`` per bin, where ``f`` is a state-space GP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ssm
from .errors import InputError, ParameterDomainError
from .exact import exact_infer
from .horizon import ihgp_infer
from .lik import LikelihoodModel
from .steady import build_grid

Z95 = 1.959963984540054


@dataclass(frozen=True, eq=False)
class BinnedCounts:
    t_hat: np.ndarray
    y: np.ndarray
    bin_width: float
    dropped: int = 0

    @property
    def n(self) -> int:
        return self.y.size


def bin_events(timestamps, t0: float, t1: float, bin_width: float) -> BinnedCounts:
    """Count events in right-open bins ``[t0 + i w, t0 + (i+1) w)`` covering ``[t0, t1)``.

    Events outside ``[t0, t1)`` are dropped and counted in ``dropped``.
    """
    if not (math.isfinite(t0) and math.isfinite(t1) and t0 < t1):
        raise ParameterDomainError(f"need finite t0 < t1, got {t0}, {t1}")
    if not (math.isfinite(bin_width) and bin_width > 0):
        raise ParameterDomainError(f"bin width must be positive, got {bin_width}")
    ts = np.asarray(timestamps, dtype=float).ravel()
    if np.any(np.isnan(ts)):
        raise InputError("timestamps contain NaN")
    if ts.size > 1 and np.any(np.diff(ts) < 0):
        row = int(np.argmax(np.diff(ts) < 0)) + 1
        raise InputError(f"timestamps are not sorted (row {row})")
    n = int(math.ceil((t1 - t0) / bin_width - 1e-12))
    inside = (ts >= t0) & (ts < t1)
    idx = np.minimum(np.floor((ts[inside] - t0) / bin_width).astype(np.int64), n - 1)
    y = np.bincount(idx, minlength=n).astype(float)
    t_hat = t0 + (np.arange(n) + 0.5) * bin_width
    return BinnedCounts(t_hat=t_hat, y=y, bin_width=float(bin_width), dropped=int(ts.size - inside.sum()))


@dataclass(frozen=True, eq=False)
class IntensityPosterior:
    """Per-bin intensity (events per bin); divide by ``bin_width`` for a rate per time unit."""

    t_hat: np.ndarray
    counts: np.ndarray
    median: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray
    latent_mean: np.ndarray
    latent_var: np.ndarray
    log_lik: float
    bin_width: float
    method: str

    def rate(self) -> np.ndarray:
        return self.median / self.bin_width


def fit_intensity(counts: BinnedCounts, spec: ssm.KernelSpec, use_ihgp: bool = True,
                  grid_opts: dict | None = None, backend=None) -> IntensityPosterior:
    """ADF inference of the log intensity and its log-normal quantiles per bin."""
    if counts.n == 0:
        raise InputError("no bins")
    model = ssm.discretize(ssm.build(spec), counts.bin_width)
    lik = LikelihoodModel("poisson")
    if use_ihgp:
        grid = build_grid(model, **(grid_opts or {}))
        marg = ihgp_infer(model, grid, counts.y, lik, backend=backend).marginals
    else:
        marg = exact_infer(model, counts.y, lik, backend=backend)
    mu, sd = marg.mean, np.sqrt(marg.var)
    return IntensityPosterior(
        t_hat=counts.t_hat, counts=counts.y, median=np.exp(mu),
        lower95=np.exp(mu - Z95 * sd), upper95=np.exp(mu + Z95 * sd),
        latent_mean=mu, latent_var=marg.var, log_lik=marg.log_lik,
        bin_width=counts.bin_width, method="ihgp" if use_ihgp else "exact")
