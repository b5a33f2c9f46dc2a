"""Likelihoods and moment matching to Gaussian sites.

Each observation is turned into a pseudo-observation ``eta`` with
pseudo-variance ``gamma`` such that the Gaussian site ``N(eta | f, gamma)``
reproduces the first two moments of the tilted distribution
``p(y | f) N(f | mu, s2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, log_ndtr, logsumexp

from .errors import ParameterDomainError

KINDS = ("gaussian", "poisson", "logit", "probit")
TAU_MIN = 1e-10
_LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LikelihoodModel:
    kind: str
    sigma2: float | None = None
    order: int = 31

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterDomainError(f"unknown likelihood '{self.kind}', expected one of {KINDS}")
        if self.kind == "gaussian" and not (self.sigma2 is not None and self.sigma2 > 0):
            raise ParameterDomainError("Gaussian likelihood needs sigma2 > 0")
        if self.order < 11 or self.order % 2 == 0:
            raise ParameterDomainError(f"quadrature order must be odd and >= 11, got {self.order}")

    @classmethod
    def from_dict(cls, doc: dict) -> "LikelihoodModel":
        doc = dict(doc)
        kind = doc.pop("name", doc.pop("kind", None))
        return cls(kind=kind, sigma2=doc.get("sigma2"), order=int(doc.get("order", 31)))

    def to_dict(self) -> dict:
        out = {"name": self.kind, "order": self.order}
        if self.sigma2 is not None:
            out["sigma2"] = self.sigma2
        return out


@dataclass(frozen=True)
class SitePair:
    eta: float
    gamma: float
    log_z: float

    @property
    def clamped(self) -> bool:
        return math.isinf(self.gamma)


def gaussian(sigma2: float) -> LikelihoodModel:
    return LikelihoodModel("gaussian", sigma2=sigma2)


@lru_cache(maxsize=None)
def _hermite(order):
    x, w = np.polynomial.hermite.hermgauss(order)
    x = np.sqrt(2.0) * x
    logw = np.log(w) - 0.5 * math.log(math.pi)
    x.setflags(write=False)
    logw.setflags(write=False)
    return x, logw


def _check_support(lik, y):
    if lik.kind == "poisson":
        if y < 0 or y != math.floor(y):
            raise ParameterDomainError(f"Poisson counts must be non-negative integers, got {y}")
    elif lik.kind in ("logit", "probit"):
        if y not in (-1.0, 1.0):
            raise ParameterDomainError(f"class labels must be -1 or +1, got {y}")


def eval_log_density(lik: LikelihoodModel, y, f):
    """``log p(y | f)``, vectorised over ``f``."""
    y = float(y)
    _check_support(lik, y)
    f = np.asarray(f, dtype=float)
    if lik.kind == "gaussian":
        return -0.5 * (_LOG2PI + math.log(lik.sigma2) + (y - f) ** 2 / lik.sigma2)
    if lik.kind == "poisson":
        return y * f - np.exp(f) - gammaln(y + 1.0)
    if lik.kind == "logit":
        return -np.logaddexp(0.0, -y * f)
    return log_ndtr(y * f)


def _log_density_derivs(lik, y, f):
    # first and second derivative of log p(y|f) in f
    if lik.kind == "poisson":
        ef = math.exp(min(f, 700.0))
        return y - ef, -ef
    if lik.kind == "logit":
        s = 1.0 / (1.0 + math.exp(min(y * f, 700.0)))  # sigmoid(-y f)
        return y * s, -s * (1.0 - s)
    z = y * f
    r = math.exp(-0.5 * z * z - 0.5 * _LOG2PI - float(log_ndtr(z)))
    return y * r, -r * (z + r)


def _tilted_mode(lik, y, mu, s2):
    # Newton on a strictly concave objective, halving steps that do not increase it
    def phi(x):
        return float(eval_log_density(lik, y, x)) - 0.5 * (x - mu) ** 2 / s2

    f = mu
    val = phi(f)
    for _ in range(100):
        g, H = _log_density_derivs(lik, y, f)
        g -= (f - mu) / s2
        H -= 1.0 / s2
        step = -g / H
        for _ in range(60):
            with np.errstate(over="ignore"):
                new = phi(f + step)
            if new >= val:
                break
            step *= 0.5
        f += step
        val = phi(f)
        if abs(step) <= 1e-12 * (1.0 + abs(f)):
            break
    _, H = _log_density_derivs(lik, y, f)
    return f, -1.0 / (H - 1.0 / s2)


def _quadrature_moments(lik, y, mu, s2):
    # Gauss-Hermite centred on the Laplace approximation of the tilted density
    x, logw = _hermite(lik.order)
    mode, v = _tilted_mode(lik, y, mu, s2)
    sd = math.sqrt(v)
    f = mode + sd * x
    log_r = (eval_log_density(lik, y, f)
             - 0.5 * (f - mu) ** 2 / s2 - 0.5 * math.log(s2)
             + 0.5 * x ** 2 + math.log(sd))
    terms = logw + log_r
    log_z = float(logsumexp(terms))
    p = np.exp(terms - log_z)
    mean = float(p @ f)
    var = float(p @ (f - mean) ** 2)
    return log_z, mean, var


def _probit_moments(y, mu, s2):
    denom = math.sqrt(1.0 + s2)
    z = y * mu / denom
    log_z = float(log_ndtr(z))
    ratio = math.exp(-0.5 * z * z - 0.5 * _LOG2PI - log_z)
    mean = mu + y * s2 * ratio / denom
    var = s2 - s2 * s2 * ratio * (z + ratio) / (1.0 + s2)
    return log_z, mean, var


def tilted_moments(lik: LikelihoodModel, y, mu: float, s2: float):
    """``(log Z, mean, variance)`` of ``p(y|f) N(f | mu, s2)``."""
    if not s2 > 0:
        raise ParameterDomainError(f"cavity variance must be positive, got {s2}")
    y = float(y)
    _check_support(lik, y)
    if lik.kind == "gaussian":
        s = s2 + lik.sigma2
        log_z = -0.5 * (_LOG2PI + math.log(s) + (y - mu) ** 2 / s)
        k = s2 / s
        return log_z, mu + k * (y - mu), s2 * (1.0 - k)
    if lik.kind == "probit":
        return _probit_moments(y, mu, s2)
    return _quadrature_moments(lik, y, mu, s2)


def moment_match(lik: LikelihoodModel, y, mu: float, s2: float) -> SitePair:
    """Gaussian site ``(eta, gamma)`` matching the tilted moments at cavity ``N(mu, s2)``.

    A site precision at or below ``TAU_MIN`` is returned as ``gamma = inf``
    (the observation is then skipped by the filters).
    """
    if lik.kind == "gaussian":
        y = float(y)
        s = s2 + lik.sigma2
        log_z = -0.5 * (_LOG2PI + math.log(s) + (y - mu) ** 2 / s)
        return SitePair(eta=y, gamma=float(lik.sigma2), log_z=log_z)
    log_z, mean, var = tilted_moments(lik, y, mu, s2)
    tau = 1.0 / var - 1.0 / s2
    if not tau > TAU_MIN:
        return SitePair(eta=0.0, gamma=math.inf, log_z=log_z)
    nu = mean / var - mu / s2
    return SitePair(eta=nu / tau, gamma=1.0 / tau, log_z=log_z)
