"""Exact state-space inference: Kalman filter, RTS smoother and ADF.

Cost is O(m^3) per step.  This is the reference the infinite-horizon
approximation is measured against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend
from .errors import ConditioningError, NumericalDegeneracyError
from .lik import LikelihoodModel, moment_match
from .ssm import DiscreteModel


@dataclass(frozen=True, eq=False)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(eq=False)
class FilterResult:
    mf: np.ndarray
    Pf: np.ndarray
    mp: np.ndarray
    Pp: Optional[np.ndarray]
    log_lik: float

    @property
    def n(self) -> int:
        return self.mf.shape[0]

    def filtered(self, i) -> GaussianState:
        return GaussianState(self.mf[i], self.Pf[i])

    def predicted(self, i) -> GaussianState:
        if self.Pp is None:
            raise ValueError("predictive covariances were not stored")
        return GaussianState(self.mp[i], self.Pp[i])

    def gains(self, h) -> np.ndarray:
        """Per-step Kalman gains, recovered via ``Pp h - Pf h = k (h' Pp h)``."""
        Pph = self.Pp @ h
        Pfh = self.Pf @ h
        hPph = Pph @ h
        with np.errstate(invalid="ignore", divide="ignore"):
            return (Pph - Pfh) / hPph[:, None]


@dataclass(eq=False)
class PosteriorMarginals:
    mean: np.ndarray
    var: np.ndarray
    log_lik: float

    def __len__(self):
        return self.mean.shape[0]


@dataclass(eq=False)
class Sites:
    """Gaussian pseudo-observations produced by moment matching."""

    eta: np.ndarray
    gamma: np.ndarray
    log_z: np.ndarray
    observed: np.ndarray

    @property
    def clamped(self) -> int:
        """Observed steps whose site precision was too small and got dropped."""
        return int(np.sum(self.observed & np.isinf(self.gamma)))


def _as_series(y):
    y = np.ascontiguousarray(np.asarray(y, dtype=float).ravel())
    if y.size == 0:
        raise ValueError("empty observation series")
    return y


def kalman_filter(model: DiscreteModel, y, noise, store_predictive: bool = True, backend=None) -> FilterResult:
    """Kalman filter for ``y_i ~ N(h' f_i, noise_i)``.

    ``noise`` is a scalar or per-step array; NaN in ``y`` (or an infinite
    noise entry) marks a missing observation.  The first step predicts
    with ``N(0, P0)``.
    """
    y = _as_series(y)
    n, m = y.size, model.m
    r = np.ascontiguousarray(np.broadcast_to(np.asarray(noise, dtype=float), (n,)))
    if np.any(~(r > 0)):
        raise NumericalDegeneracyError("noise variances must be positive")
    mf = np.empty((n, m))
    Pf = np.empty((n, m, m))
    mp = np.empty((n, m))
    Pp = np.empty((n, m, m)) if store_predictive else None
    k = _backend.get(backend)
    ll, bad = k.kf_forward(np.ascontiguousarray(model.A), np.ascontiguousarray(model.Q),
                           np.ascontiguousarray(model.h), np.ascontiguousarray(model.P0),
                           y, r, mf, Pf, mp, Pp)
    if bad >= 0:
        raise NumericalDegeneracyError(f"innovation variance not positive at step {bad}")
    return FilterResult(mf=mf, Pf=Pf, mp=mp, Pp=Pp, log_lik=float(ll))


def rts_smoother(filt: FilterResult, model: DiscreteModel, return_states: bool = False, backend=None):
    """Rauch-Tung-Striebel smoother over a :class:`FilterResult`.

    Returns :class:`PosteriorMarginals`; with ``return_states`` also the
    smoothed state means and covariances.
    """
    n, m = filt.mf.shape
    ms = np.empty((n, m))
    mvar = np.empty(n)
    Ps = np.empty((n, m, m)) if return_states else None
    k = _backend.get(backend)
    bad = k.rts_backward(np.ascontiguousarray(model.A), np.ascontiguousarray(model.Q),
                         np.ascontiguousarray(model.h), filt.mf, filt.Pf, ms, mvar, Ps)
    if bad >= 0:
        raise ConditioningError(f"predictive covariance not positive definite after step {bad}")
    marg = PosteriorMarginals(mean=ms @ model.h, var=np.maximum(mvar, 0.0), log_lik=filt.log_lik)
    if return_states:
        return marg, ms, Ps
    return marg


def adf_filter(model: DiscreteModel, y, lik: LikelihoodModel):
    """Single-sweep EP (assumed density filtering) on the exact state-space model.

    Returns ``(filter result, sites, log_lik)``; the log likelihood sums the
    log normalisers of the tilted distributions.
    """
    y = _as_series(y)
    n, m = y.size, model.m
    A, Q, h = model.A, model.Q, model.h
    mf = np.empty((n, m))
    Pf = np.empty((n, m, m))
    mp = np.empty((n, m))
    Pp = np.empty((n, m, m))
    eta = np.zeros(n)
    gam = np.full(n, np.inf)
    log_z = np.zeros(n)
    mcur, Pcur = np.zeros(m), np.array(model.P0)
    for i in range(n):
        if i > 0:
            mcur = A @ mcur
            Pcur = A @ Pcur @ A.T + Q
            Pcur = 0.5 * (Pcur + Pcur.T)
        mp[i], Pp[i] = mcur, Pcur
        if not np.isnan(y[i]):
            Ph = Pcur @ h
            s2 = float(h @ Ph)
            mu = float(h @ mcur)
            site = moment_match(lik, y[i], mu, s2)
            eta[i], gam[i], log_z[i] = site.eta, site.gamma, site.log_z
            if np.isfinite(site.gamma):
                s = s2 + site.gamma
                mcur = mcur + Ph * ((site.eta - mu) / s)
                Pcur = Pcur - np.outer(Ph, Ph) / s
                Pcur = 0.5 * (Pcur + Pcur.T)
        mf[i], Pf[i] = mcur, Pcur
    ll = float(np.sum(log_z))
    return FilterResult(mf=mf, Pf=Pf, mp=mp, Pp=Pp, log_lik=ll), Sites(eta, gam, log_z, ~np.isnan(y)), ll


def exact_infer(model: DiscreteModel, y, lik: LikelihoodModel, backend=None) -> PosteriorMarginals:
    """Filter and smooth; Gaussian likelihoods take the closed-form path."""
    if lik.kind == "gaussian":
        filt = kalman_filter(model, y, lik.sigma2, store_predictive=False, backend=backend)
    else:
        filt, _, _ = adf_filter(model, y, lik)
    return rts_smoother(filt, model, backend=backend)
