"""Gradients of the steady-state marginal likelihood and online adaptation.

Hyperparameters live in log space.  For each one the discrete model
sensitivities (dA, dQ, d noise) are formed analytically, the derivative
of the stationary predictive covariance is obtained from a linear
fixed-point (Stein) equation, and the filter mean derivatives are pushed
forward alongside the steady-state filter, so a gradient costs O(p m^2)
per time step on top of p + 1 small matrix equations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from . import _backend, ssm
from .errors import ConvergenceError, ParameterDomainError, StabilityError
from .ssm import DiscreteModel, KernelSpec
from .steady import solve_pp_dare, solve_stein

log = logging.getLogger(__name__)

NOISE = "noise.sigma2"


@dataclass(frozen=True, eq=False)
class HyperParams:
    """Log-domain hyperparameter vector with names matching the kernel tree.

    The last name is :data:`NOISE` when a Gaussian noise variance is part of
    the parameter set.  ``fixed`` lists names excluded from optimisation.
    """

    names: tuple
    theta: np.ndarray
    fixed: frozenset = frozenset()

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).ravel()
        if theta.shape != (len(self.names),):
            raise ParameterDomainError(f"{len(self.names)} names but {theta.size} values")
        if not np.all(np.isfinite(theta)):
            raise ParameterDomainError("hyperparameters must be finite in log space")
        unknown = set(self.fixed) - set(self.names)
        if unknown:
            raise ParameterDomainError(f"fixed names not in parameter set: {sorted(unknown)}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "fixed", frozenset(self.fixed))

    @classmethod
    def from_model(cls, spec: KernelSpec, noise: Optional[float] = None, fixed=()) -> "HyperParams":
        values = ssm.kernel_params(spec)
        if noise is not None:
            values[NOISE] = float(noise)
        return cls(tuple(values), np.log(list(values.values())), frozenset(fixed))

    @property
    def natural(self) -> dict:
        return dict(zip(self.names, np.exp(self.theta).tolist()))

    @property
    def free_mask(self) -> np.ndarray:
        return np.array([n not in self.fixed for n in self.names])

    @property
    def has_noise(self) -> bool:
        return NOISE in self.names

    def with_theta(self, theta) -> "HyperParams":
        return HyperParams(self.names, theta, self.fixed)

    def apply(self, spec: KernelSpec):
        """``(kernel spec, noise variance or None)`` at these values."""
        nat = self.natural
        noise = nat.pop(NOISE, None)
        return ssm.with_kernel_params(spec, nat), noise

    def to_dict(self) -> dict:
        return {"names": list(self.names), "log_theta": self.theta.tolist(),
                "natural": self.natural, "fixed": sorted(self.fixed)}


@dataclass(frozen=True, eq=False)
class ModelSensitivity:
    """Discrete model at ``theta`` plus ``d/d log theta_k`` of ``A``, ``Q`` and the noise variance."""

    names: tuple
    model: DiscreteModel
    noise: Optional[float]
    dA: np.ndarray = field(repr=False)
    dQ: np.ndarray = field(repr=False)
    dnoise: np.ndarray = field(repr=False)

    @property
    def p(self) -> int:
        return len(self.names)


def _expm_frechet_block(F, dF, dt):
    m = F.shape[0]
    big = np.zeros((2 * m, 2 * m))
    big[:m, :m] = F
    big[m:, m:] = F
    big[:m, m:] = dF
    E = sla.expm(big * dt)
    return E[:m, :m], E[:m, m:]


def model_sensitivities(spec: KernelSpec, theta: HyperParams, dt: float) -> ModelSensitivity:
    kspec, noise = theta.apply(spec)
    sde, der = ssm.build_with_derivatives(kspec)
    model = ssm.discretize(sde, dt)
    A, Pinf = np.asarray(model.A), np.asarray(sde.Pinf)
    p, m = len(theta.names), model.m
    dA = np.zeros((p, m, m))
    dQ = np.zeros((p, m, m))
    dnoise = np.zeros(p)
    pos = {n: i for i, n in enumerate(der.names)}
    for k, name in enumerate(theta.names):
        if name == NOISE:
            dnoise[k] = noise
            continue
        j = pos[name]
        dF, dP = der.dF[j], der.dPinf[j]
        if np.any(dF):
            _, dA[k] = _expm_frechet_block(sde.F, dF, dt)
        t = dA[k] @ Pinf @ A.T
        dQk = dP - t - t.T - A @ dP @ A.T
        dQ[k] = 0.5 * (dQk + dQk.T)
    return ModelSensitivity(names=theta.names, model=model, noise=noise, dA=dA, dQ=dQ, dnoise=dnoise)


def solve_derivative_dare(model: DiscreteModel, sens: ModelSensitivity, Pp, gamma: float) -> np.ndarray:
    """Derivatives ``dPp`` (p, m, m) of the stationary predictive covariance.

    Each solves ``dPp = M dPp M' + C`` with ``M = A - B h'`` and
    ``B = A Pp h / (h' Pp h + gamma)``.
    """
    A, h = np.asarray(model.A), np.asarray(model.h)
    Pp = np.asarray(Pp)
    B = A @ Pp @ h / (h @ Pp @ h + gamma)
    M = A - np.outer(B, h)
    rho = float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0
    if not rho < 1.0:
        raise StabilityError(f"closed-loop spectral radius {rho:.6g} >= 1")
    Pph = Pp @ h
    out = np.empty((sens.p, model.m, model.m))
    for k in range(sens.p):
        dA = sens.dA[k]
        t1 = dA @ Pp @ A.T
        t2 = np.outer(dA @ Pph, B)
        C = t1 + t1.T - t2 - t2.T + sens.dnoise[k] * np.outer(B, B) + sens.dQ[k]
        X = solve_stein(M, 0.5 * (C + C.T))
        res = np.linalg.norm(M @ X @ M.T + C - X)
        if res > 1e-10 * max(1.0, np.linalg.norm(X)):
            raise ConvergenceError(f"derivative Riccati residual {res:.3g} for {sens.names[k]}", residual=res)
        out[k] = X
    return out


def nll_gradient(sens: ModelSensitivity, y, backend=None, dPp=None, Pp=None):
    """Steady-state negative log likelihood and its gradient in log space.

    The objective is the one evaluated by
    :func:`ihgp.horizon.steady_gaussian_filter`; the gradient is exact for it.
    """
    if sens.noise is None:
        raise ParameterDomainError("steady-state gradient needs a Gaussian noise variance")
    model, noise = sens.model, float(sens.noise)
    y = np.ascontiguousarray(np.asarray(y, dtype=float).ravel())
    if y.size == 0:
        raise ParameterDomainError("empty observation window")
    h = np.asarray(model.h)
    if Pp is None:
        Pp = solve_pp_dare(model, noise)
    if dPp is None:
        dPp = solve_derivative_dare(model, sens, Pp, noise)
    Pph = Pp @ h
    s = float(h @ Pph + noise)
    k = Pph / s
    ds = np.einsum("i,pij,j->p", h, dPp, h) + sens.dnoise
    dk = (dPp @ h) / s - np.outer(ds, Pph) / (s * s)
    grad = np.empty(sens.p)
    nll = _backend.get(backend).steady_grad(
        np.ascontiguousarray(model.A), np.ascontiguousarray(h), np.ascontiguousarray(k), s,
        np.ascontiguousarray(sens.dA), np.ascontiguousarray(dk), np.ascontiguousarray(ds), y, grad)
    return float(nll), grad


def steady_nll(spec: KernelSpec, theta: HyperParams, y, dt: float, backend=None) -> float:
    """Steady-state negative log likelihood without the gradient (for checks and line searches)."""
    from .horizon import steady_gaussian_filter

    kspec, noise = theta.apply(spec)
    model = ssm.discretize(ssm.build(kspec), dt)
    _, ll = steady_gaussian_filter(model, solve_pp_dare(model, noise), y, noise, backend=backend)
    return -ll


def objective(spec: KernelSpec, theta: HyperParams, y, dt: float, backend=None):
    """``(nll, grad)`` at ``theta``."""
    return nll_gradient(model_sensitivities(spec, theta, dt), y, backend=backend)


# --------------------------------------------------------------------------
# batch and online optimisation
# --------------------------------------------------------------------------


@dataclass
class FitResult:
    theta: HyperParams
    nll: float
    grad: np.ndarray
    n_iter: int
    trace: list
    converged: bool
    message: str = ""


def fit(spec: KernelSpec, theta0: HyperParams, y, dt: float, max_iter: int = 500, gtol: float = 1e-6,
        bound: float = 12.0, backend=None) -> FitResult:
    """Minimise the steady-state NLL over the free log-parameters with L-BFGS-B."""
    mask = theta0.free_mask
    base = np.array(theta0.theta)
    trace = []

    def full(x):
        t = base.copy()
        t[mask] = x
        return t

    def fun(x):
        th = theta0.with_theta(full(x))
        try:
            nll, g = objective(spec, th, y, dt, backend=backend)
        except (StabilityError, ConvergenceError, np.linalg.LinAlgError) as exc:
            log.debug("objective failed at %s: %s", x, exc)
            return np.inf, np.zeros_like(x)
        return nll, g[mask]

    def record(x):
        val, g = fun(x)
        trace.append({"theta": full(x).tolist(), "nll": val, "grad_inf": float(np.max(np.abs(g), initial=0.0))})

    x0 = base[mask]
    if x0.size == 0:
        nll, g = objective(spec, theta0, y, dt, backend=backend)
        return FitResult(theta0, nll, g, 0, [], True, "no free parameters")
    bounds = [(v - bound, v + bound) for v in x0]
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds, callback=record,
                   options={"maxiter": max_iter, "gtol": gtol, "ftol": 1e-15})
    if not np.isfinite(res.fun):
        raise ConvergenceError(f"optimizer diverged: {res.message}; last trace {trace[-3:]}")
    theta = theta0.with_theta(full(res.x))
    nll, g = objective(spec, theta, y, dt, backend=backend)
    return FitResult(theta, nll, g, int(res.nit), trace, bool(res.success), str(res.message))


@dataclass
class StepInfo:
    accepted: bool
    nll: float
    grad: np.ndarray
    reason: str = ""


def online_step(spec: KernelSpec, theta: HyperParams, window, dt: float, eta, backend=None):
    """One incremental ascent step ``theta + eta * grad log p(window)``.

    ``eta`` is a scalar or a per-parameter vector.  Returns ``(new theta,
    StepInfo)``; a failed or non-finite gradient leaves ``theta`` unchanged.
    """
    eta = np.broadcast_to(np.asarray(eta, dtype=float), theta.theta.shape)
    if np.any(eta < 0) or not np.all(np.isfinite(eta)):
        raise ParameterDomainError("learning rates must be finite and non-negative")
    window = np.asarray(window, dtype=float).ravel()
    if window.size == 0:
        raise ParameterDomainError("empty observation window")
    try:
        nll, g = objective(spec, theta, window, dt, backend=backend)
    except (StabilityError, ConvergenceError, np.linalg.LinAlgError) as exc:
        log.warning("online step rejected: %s", exc)
        return theta, StepInfo(False, math.nan, np.full(theta.theta.shape, np.nan), str(exc))
    if not (np.all(np.isfinite(g)) and math.isfinite(nll)):
        log.warning("online step rejected: non-finite gradient")
        return theta, StepInfo(False, nll, g, "non-finite gradient")
    step = np.where(theta.free_mask, eta * g, 0.0)
    try:
        new = theta.with_theta(theta.theta - step)
    except ParameterDomainError as exc:
        return theta, StepInfo(False, nll, g, str(exc))
    return new, StepInfo(True, nll, g)


class OnlineLearner:
    """Rolling-window hyperparameter adaptation with lazily rebuilt model state.

    ``on_step`` (if given) is called after every window with the step index,
    the new ``HyperParams`` and the :class:`StepInfo`.
    """

    def __init__(self, spec: KernelSpec, theta: HyperParams, dt: float, eta, backend=None,
                 on_step: Optional[Callable] = None):
        self.spec = spec
        self.theta = theta
        self.dt = float(dt)
        self.eta = eta
        self.backend = backend
        self.on_step = on_step
        self.steps = 0
        self._cache_key = None
        self._cache = None

    def step(self, window) -> StepInfo:
        self.theta, info = online_step(self.spec, self.theta, window, self.dt, self.eta, backend=self.backend)
        self.steps += 1
        if self.on_step is not None:
            self.on_step(self.steps, self.theta, info)
        return info

    def current_model(self):
        """``(kernel spec, DiscreteModel, noise)`` for the current theta, cached until theta changes."""
        key = self.theta.theta.tobytes()
        if key != self._cache_key:
            kspec, noise = self.theta.apply(self.spec)
            self._cache = (kspec, ssm.discretize(ssm.build(kspec), self.dt), noise)
            self._cache_key = key
        return self._cache
