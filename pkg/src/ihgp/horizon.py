"""Infinite-horizon inference: O(m^2) per step after the grid setup.

At every step the predictive covariance is taken from the steady state of
a model whose likelihood variance is frozen at the previous step's site
variance, looked up on a :class:`~ihgp.steady.GammaGrid`.  Non-Gaussian
likelihoods go through single-sweep moment matching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import ConfigurationError
from .exact import PosteriorMarginals
from .lik import LikelihoodModel, moment_match
from .ssm import DiscreteModel
from .steady import GammaGrid, stationary_gain


@dataclass(eq=False)
class IhgpResult:
    marginals: PosteriorMarginals
    gamma: np.ndarray
    eta: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def mean(self):
        return self.marginals.mean

    @property
    def var(self):
        return self.marginals.var

    @property
    def log_lik(self):
        return self.marginals.log_lik


def _check(model, grid, y):
    if grid.model.m != model.m:
        raise ConfigurationError(f"grid built for m={grid.model.m}, model has m={model.m}")
    y = np.ascontiguousarray(np.asarray(y, dtype=float).ravel())
    if y.size == 0:
        raise ConfigurationError("empty observation series")
    return y


def _forward_adf(model, grid, y, lik):
    # moment matching needs the cavity before the site is known, so this loop stays in Python
    n, m = y.size, model.m
    A, h = np.asarray(model.A), np.asarray(model.h)
    mf = np.empty((n, m))
    eta = np.zeros(n)
    gam = np.full(n, np.inf)
    log_z = np.zeros(n)
    s2_t = np.empty(n)
    mcur = np.zeros(m)
    g_prev = math.inf
    for i in range(n):
        mpred = A @ mcur if i else mcur
        idx, w = grid.stencil1(g_prev)
        Ph = w @ grid.Ph[idx]
        s2 = float(w @ grid.hPh[idx])
        s2_t[i] = s2
        if not math.isnan(y[i]):
            mu = float(h @ mpred)
            site = moment_match(lik, y[i], mu, s2)
            eta[i], gam[i], log_z[i] = site.eta, site.gamma, site.log_z
            if not math.isinf(site.gamma):
                mpred = mpred + Ph * ((site.eta - mu) / (s2 + site.gamma))
        mcur = mpred
        mf[i] = mcur
        g_prev = gam[i]
    return mf, eta, gam, float(np.sum(log_z)), s2_t


def ihgp_infer(model: DiscreteModel, grid: GammaGrid, y, lik: LikelihoodModel,
               force_adf: bool = False, backend=None) -> IhgpResult:
    """Infinite-horizon forward/backward pass over ``y`` (NaN = missing).

    Gaussian likelihoods use the closed-form sites (and the noise variance is
    added to ``grid`` as an exactly solved node); ``force_adf`` routes them
    through the generic moment-matching loop instead.
    """
    y = _check(model, grid, y)
    kern = _backend.get(backend)
    A = np.ascontiguousarray(model.A)
    h = np.ascontiguousarray(model.h)
    n, m = y.size, model.m
    if lik.kind == "gaussian" and not force_adf:
        grid.add_exact(lik.sigma2)
        observed = ~np.isnan(y)
        gam = np.where(observed, float(lik.sigma2), np.inf)
        eta = np.where(observed, y, 0.0)
        g_prev = np.concatenate([[np.inf], gam[:-1]])
        idx_p, w_p = grid.stencil(g_prev)
        mf = np.empty((n, m))
        mu_t = np.empty(n)
        s2_t = np.empty(n)
        ll = kern.ihgp_forward(A, h, grid.Ph, grid.hPh, idx_p, w_p, eta, gam, mf, mu_t, s2_t)
    else:
        if lik.kind == "gaussian":
            grid.add_exact(lik.sigma2)
        mf, eta, gam, ll, s2_t = _forward_adf(model, grid, y, lik)
    idx_s, w_s = grid.stencil(gam)
    ms = np.empty((n, m))
    kern.ihgp_backward(A, grid.G, idx_s, w_s, mf, ms)
    var = np.maximum(np.sum(w_s * grid.hPsh[idx_s], axis=1), 0.0)
    finite = np.isfinite(gam)
    gap = np.zeros(n)
    # covariance update as printed (Pp - k gamma k') vs. the Kalman form (Pp - k h'Pp), projected on h
    hk = np.where(finite, s2_t / (s2_t + np.where(finite, gam, 1.0)), 0.0)
    gap[finite] = np.abs(hk[finite] ** 2 * (s2_t[finite] + gam[finite]) - hk[finite] ** 2 * gam[finite])
    diagnostics = {
        "clamped_sites": int(np.sum(~np.isnan(y) & ~finite)),
        "grid_range_hits": int(np.sum(finite & ((gam < grid.gmin) | (gam > grid.gmax)))),
        "filter_cov_form_gap": float(gap.max()) if n else 0.0,
        "backend": kern.__name__.rsplit(".", 1)[-1],
    }
    marg = PosteriorMarginals(mean=ms @ h, var=var, log_lik=float(ll))
    return IhgpResult(marginals=marg, gamma=gam, eta=eta, diagnostics=diagnostics)


def steady_gaussian_filter(model: DiscreteModel, Pp, y, noise: float, backend=None):
    """Time-invariant filter with the stationary gain of ``Pp`` at noise ``noise``.

    Returns ``(state means, log likelihood)`` where the log likelihood uses
    the stationary innovation variance at every step.
    """
    y = np.ascontiguousarray(np.asarray(y, dtype=float).ravel())
    h = np.ascontiguousarray(model.h)
    Pp = np.asarray(Pp)
    if Pp.shape != (model.m, model.m):
        raise ConfigurationError(f"Pp has shape {Pp.shape}, expected {(model.m, model.m)}")
    k = np.ascontiguousarray(stationary_gain(Pp, h, noise))
    s = float(h @ Pp @ h + noise)
    mf = np.empty((y.size, model.m))
    ll = _backend.get(backend).steady_filter(np.ascontiguousarray(model.A), h, k, s, y, mf)
    return mf, float(ll)
