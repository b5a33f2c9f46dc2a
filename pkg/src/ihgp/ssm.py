"""Covariance functions as linear time-invariant SDEs.

A kernel is described by a small tree (:class:`Matern`, :class:`Periodic`,
:class:`Sum`, :class:`Product`).  :func:`build` compiles the tree into an
:class:`LtiSde` and :func:`discretize` turns that into the step-invariant
transition model used by every inference routine.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
import scipy.linalg as sla
from scipy.special import ive

from .errors import ParameterDomainError, StabilityError

MATERN_ORDERS = (0.5, 1.5, 2.5)


# --------------------------------------------------------------------------
# Kernel specification tree
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Matern:
    nu: float = 1.5
    sigma2: float = 1.0
    ell: float = 1.0

    def __post_init__(self):
        if self.nu not in MATERN_ORDERS:
            raise ParameterDomainError(f"Matern order must be one of {MATERN_ORDERS}, got {self.nu}")
        _check_positive(sigma2=self.sigma2, ell=self.ell)


@dataclass(frozen=True)
class Periodic:
    """Canonical periodic kernel ``sigma2 * exp(-2 sin^2(pi tau / period) / ell^2)``.

    ``J`` is the number of cosine harmonics kept on top of the constant term.
    """

    sigma2: float = 1.0
    period: float = 1.0
    ell: float = 1.0
    J: int = 6

    def __post_init__(self):
        _check_positive(sigma2=self.sigma2, period=self.period, ell=self.ell)
        if int(self.J) != self.J or self.J < 1:
            raise ParameterDomainError(f"harmonic count J must be an integer >= 1, got {self.J}")


@dataclass(frozen=True)
class Sum:
    parts: tuple

    def __post_init__(self):
        if len(self.parts) < 1:
            raise ParameterDomainError("Sum needs at least one component")


@dataclass(frozen=True)
class Product:
    parts: tuple

    def __post_init__(self):
        if len(self.parts) < 1:
            raise ParameterDomainError("Product needs at least one component")


KernelSpec = Union[Matern, Periodic, Sum, Product]


def _check_positive(**values):
    for name, v in values.items():
        if not (np.isfinite(v) and v > 0):
            raise ParameterDomainError(f"{name} must be positive and finite, got {v}")


def parse_kernel(doc) -> KernelSpec:
    """Parse the JSON kernel document (a dict or a JSON string)."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    if not isinstance(doc, dict) or len(doc) != 1:
        raise ParameterDomainError(f"kernel node must be a single-key object, got {doc!r}")
    (key, body), = doc.items()
    if key in ("sum", "product"):
        if not isinstance(body, list):
            raise ParameterDomainError(f"'{key}' expects a list of kernels")
        parts = tuple(parse_kernel(p) for p in body)
        return Sum(parts) if key == "sum" else Product(parts)
    if key == "matern":
        return Matern(nu=float(body.get("nu", 1.5)), sigma2=float(body.get("sigma2", 1.0)),
                      ell=float(body.get("ell", 1.0)))
    if key == "periodic":
        return Periodic(sigma2=float(body.get("sigma2", 1.0)), period=float(body.get("period", 1.0)),
                        ell=float(body.get("ell", 1.0)), J=int(body.get("J", 6)))
    raise ParameterDomainError(f"unknown kernel type '{key}'")


def kernel_to_dict(spec: KernelSpec) -> dict:
    if isinstance(spec, Matern):
        return {"matern": {"nu": spec.nu, "sigma2": spec.sigma2, "ell": spec.ell}}
    if isinstance(spec, Periodic):
        return {"periodic": {"sigma2": spec.sigma2, "period": spec.period, "ell": spec.ell, "J": spec.J}}
    key = "sum" if isinstance(spec, Sum) else "product"
    return {key: [kernel_to_dict(p) for p in spec.parts]}


def _leaves(spec):
    if isinstance(spec, (Sum, Product)):
        for p in spec.parts:
            yield from _leaves(p)
    else:
        yield spec


def _leaf_params(leaf):
    if isinstance(leaf, Matern):
        return ("sigma2", "ell")
    return ("sigma2", "period", "ell")


def _leaf_prefix(leaf, idx):
    return f"{'matern' if isinstance(leaf, Matern) else 'periodic'}{idx}"


def kernel_params(spec: KernelSpec) -> dict[str, float]:
    """Positive hyperparameters keyed ``<type><leaf index>.<field>`` in depth-first order."""
    out = {}
    for i, leaf in enumerate(_leaves(spec)):
        for p in _leaf_params(leaf):
            out[f"{_leaf_prefix(leaf, i)}.{p}"] = float(getattr(leaf, p))
    return out


def with_kernel_params(spec: KernelSpec, values: dict[str, float]) -> KernelSpec:
    """Return a copy of ``spec`` with the named hyperparameters replaced."""
    counter = [0]

    def rebuild(node):
        if isinstance(node, (Sum, Product)):
            return type(node)(tuple(rebuild(p) for p in node.parts))
        idx = counter[0]
        counter[0] += 1
        prefix = _leaf_prefix(node, idx)
        changes = {p: float(values[f"{prefix}.{p}"]) for p in _leaf_params(node) if f"{prefix}.{p}" in values}
        return replace(node, **changes) if changes else node

    return rebuild(spec)


def effective_length(spec: KernelSpec) -> float:
    """Longest characteristic time scale in the prior."""
    scales = []
    for leaf in _leaves(spec):
        scales.append(leaf.ell if isinstance(leaf, Matern) else leaf.period)
    return max(scales)


def eval_kernel(spec: KernelSpec, tau) -> np.ndarray:
    """Evaluate the covariance function directly at lags ``tau``."""
    r = np.abs(np.asarray(tau, dtype=float))
    if isinstance(spec, Sum):
        return sum(eval_kernel(p, r) for p in spec.parts)
    if isinstance(spec, Product):
        out = np.ones_like(r)
        for p in spec.parts:
            out = out * eval_kernel(p, r)
        return out
    if isinstance(spec, Periodic):
        return spec.sigma2 * np.exp(-2.0 * np.sin(np.pi * r / spec.period) ** 2 / spec.ell ** 2)
    lam = math.sqrt(2 * spec.nu) * r / spec.ell
    if spec.nu == 0.5:
        poly = 1.0
    elif spec.nu == 1.5:
        poly = 1.0 + lam
    else:
        poly = 1.0 + lam + lam ** 2 / 3.0
    return spec.sigma2 * poly * np.exp(-lam)


# --------------------------------------------------------------------------
# State-space models
# --------------------------------------------------------------------------


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LtiSde:
    """Continuous-time prior ``df = F f dt + L dw``, ``f(t) = h' f``."""

    F: np.ndarray
    L: np.ndarray
    Qc: np.ndarray
    h: np.ndarray
    Pinf: np.ndarray

    def __post_init__(self):
        for name in ("F", "L", "Qc", "h", "Pinf"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def m(self) -> int:
        return self.F.shape[0]

    @property
    def s(self) -> int:
        return self.L.shape[1]

    def diffusion(self) -> np.ndarray:
        return self.L @ self.Qc @ self.L.T

    def lyapunov_residual(self) -> float:
        R = self.F @ self.Pinf + self.Pinf @ self.F.T + self.diffusion()
        return float(np.linalg.norm(R))

    def covariance(self, tau) -> np.ndarray:
        """Covariance function reconstructed from the state space at lags ``tau``."""
        taus = np.atleast_1d(np.abs(np.asarray(tau, dtype=float)))
        out = np.array([self.h @ sla.expm(self.F * t) @ self.Pinf @ self.h for t in taus])
        return out if np.ndim(tau) else out[0]


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    A: np.ndarray
    Q: np.ndarray
    h: np.ndarray
    P0: np.ndarray
    dt: float

    def __post_init__(self):
        for name in ("A", "Q", "h", "P0"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def m(self) -> int:
        return self.A.shape[0]


def stationary_covariance(F, L, Qc) -> np.ndarray:
    """Solve ``F P + P F' + L Qc L' = 0`` for the stationary covariance."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float)).reshape(F.shape[0], -1)
    Qc = np.atleast_2d(np.asarray(Qc, dtype=float))
    eig = np.linalg.eigvals(F)
    if np.max(eig.real) >= 0:
        raise StabilityError(f"feedback matrix is not Hurwitz (max Re(eig) = {np.max(eig.real):.3g})")
    D = L @ Qc @ L.T
    if not np.any(D):
        return np.zeros_like(F)
    P = sla.solve_continuous_lyapunov(F, -D)
    return 0.5 * (P + P.T)


def _matern_coeffs(order):
    p = int(order - 0.5)
    m = p + 1
    lam_pow = np.arange(m, 0, -1)  # lambda powers for the companion row
    binom = np.array([math.comb(m, k) for k in range(m)], dtype=float)
    return p, m, binom, lam_pow


def build_matern(order: float, sigma2: float, ell: float) -> LtiSde:
    """Matérn covariance with half-integer smoothness ``order`` as an SDE."""
    if order not in MATERN_ORDERS:
        raise ParameterDomainError(f"Matern order must be one of {MATERN_ORDERS}, got {order}")
    _check_positive(sigma2=sigma2, ell=ell)
    p, m, binom, lam_pow = _matern_coeffs(order)
    lam = math.sqrt(2 * order) / ell
    F = np.diag(np.ones(m - 1), 1)
    F[-1, :] = -binom * lam ** lam_pow
    L = np.zeros((m, 1))
    L[-1, 0] = 1.0
    qc = sigma2 * (2 * lam) ** (2 * p + 1) * math.factorial(p) ** 2 / math.factorial(2 * p)
    h = np.zeros(m)
    h[0] = 1.0
    if m == 1:
        Pinf = np.array([[sigma2]])
    elif m == 2:
        Pinf = np.diag([sigma2, lam ** 2 * sigma2])
    else:
        kappa = lam ** 2 * sigma2 / 3.0
        Pinf = np.array([[sigma2, 0.0, -kappa], [0.0, kappa, 0.0], [-kappa, 0.0, lam ** 4 * sigma2]])
    return LtiSde(F=F, L=L, Qc=[[qc]], h=h, Pinf=Pinf)


def periodic_weights(ell: float, J: int) -> np.ndarray:
    """Normalised Bessel weights ``q_j^2 / sigma2`` for harmonics ``j = 0..J``."""
    x = ell ** -2.0
    j = np.arange(J + 1)
    w = ive(j, x) * np.where(j == 0, 1.0, 2.0)
    return w / w.sum()


def build_periodic(sigma2: float, period: float, J: int = 6, ell: float = 1.0) -> LtiSde:
    """Truncated harmonic-oscillator expansion of the canonical periodic kernel.

    Harmonic ``j`` oscillates at ``2 pi j / period``; ``j = 0`` carries the
    constant part of the kernel.  The state has ``2 (J + 1)`` components.
    """
    spec = Periodic(sigma2=sigma2, period=period, ell=ell, J=J)
    q2 = spec.sigma2 * periodic_weights(spec.ell, spec.J)
    w0 = 2 * np.pi / spec.period
    m = 2 * (spec.J + 1)
    F = np.zeros((m, m))
    Pinf = np.zeros((m, m))
    h = np.zeros(m)
    for jj in range(spec.J + 1):
        b = slice(2 * jj, 2 * jj + 2)
        F[b, b] = [[0.0, -w0 * jj], [w0 * jj, 0.0]]
        Pinf[b, b] = q2[jj] * np.eye(2)
        h[2 * jj] = 1.0
    return LtiSde(F=F, L=np.zeros((m, 1)), Qc=[[0.0]], h=h, Pinf=Pinf)


def combine_sum(a: LtiSde, b: LtiSde) -> LtiSde:
    """State-space form of ``k_a + k_b`` (block-diagonal concatenation)."""
    return LtiSde(
        F=sla.block_diag(a.F, b.F),
        L=sla.block_diag(a.L, b.L),
        Qc=sla.block_diag(a.Qc, b.Qc),
        h=np.concatenate([a.h, b.h]),
        Pinf=sla.block_diag(a.Pinf, b.Pinf),
    )


def combine_product(a: LtiSde, b: LtiSde) -> LtiSde:
    """State-space form of ``k_a * k_b`` (Kronecker sum of the feedback matrices).

    The diffusion is set so that ``Pinf_a (x) Pinf_b`` solves the Lyapunov
    equation; it is carried as ``L = I`` with ``Qc`` the full diffusion.
    """
    Ia, Ib = np.eye(a.m), np.eye(b.m)
    F = np.kron(a.F, Ib) + np.kron(Ia, b.F)
    Pinf = np.kron(a.Pinf, b.Pinf)
    D = -(F @ Pinf + Pinf @ F.T)
    D = 0.5 * (D + D.T)
    return LtiSde(F=F, L=np.eye(F.shape[0]), Qc=D, h=np.kron(a.h, b.h), Pinf=Pinf)


def build(spec: KernelSpec) -> LtiSde:
    """Compile a kernel tree into a continuous-time state-space model."""
    return _build_with_derivatives(spec, [0])[0]


def discretize(model: LtiSde, dt: float) -> DiscreteModel:
    if not (np.isfinite(dt) and dt > 0):
        raise ParameterDomainError(f"dt must be positive, got {dt}")
    A = sla.expm(model.F * dt)
    Q = model.Pinf - A @ model.Pinf @ A.T
    Q = 0.5 * (Q + Q.T)
    return DiscreteModel(A=A, Q=Q, h=model.h, P0=model.Pinf, dt=float(dt))


# --------------------------------------------------------------------------
# Hyperparameter derivatives (log-domain) of F and Pinf
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SdeDerivatives:
    """``dF[k]`` and ``dPinf[k]`` with respect to ``log(params[k])``."""

    names: tuple
    dF: np.ndarray = field(repr=False)
    dPinf: np.ndarray = field(repr=False)


def _matern_derivs(leaf, sde):
    p, m, binom, lam_pow = _matern_coeffs(leaf.nu)
    dF_ell = np.zeros((m, m))
    dF_ell[-1, :] = binom * lam_pow * (math.sqrt(2 * leaf.nu) / leaf.ell) ** lam_pow
    idx = np.add.outer(np.arange(m), np.arange(m))
    return {
        "sigma2": (np.zeros((m, m)), sde.Pinf.copy()),
        "ell": (dF_ell, -idx * sde.Pinf),
    }


def _periodic_derivs(leaf, sde):
    m = sde.m
    x = leaf.ell ** -2.0
    j = np.arange(leaf.J + 1)
    c = np.where(j == 0, 1.0, 2.0)
    v = ive(j, x)
    dv = 0.5 * (ive(np.abs(j - 1), x) + ive(j + 1, x)) - v
    S, dS = np.sum(c * v), np.sum(c * dv)
    dw_dx = c * (dv * S - v * dS) / S ** 2
    dq2 = leaf.sigma2 * dw_dx * (-2.0 * x)
    dP_ell = np.kron(np.diag(dq2), np.eye(2))
    zeros = np.zeros((m, m))
    return {
        "sigma2": (zeros, sde.Pinf.copy()),
        "period": (-sde.F.copy(), zeros),
        "ell": (zeros, dP_ell),
    }


def _build_with_derivatives(spec, counter):
    if isinstance(spec, Matern):
        idx = counter[0]
        counter[0] += 1
        sde = build_matern(spec.nu, spec.sigma2, spec.ell)
        d = _matern_derivs(spec, sde)
        return sde, {f"matern{idx}.{k}": v for k, v in d.items()}
    if isinstance(spec, Periodic):
        idx = counter[0]
        counter[0] += 1
        sde = build_periodic(spec.sigma2, spec.period, spec.J, spec.ell)
        d = _periodic_derivs(spec, sde)
        return sde, {f"periodic{idx}.{k}": v for k, v in d.items()}
    sde, derivs = _build_with_derivatives(spec.parts[0], counter)
    for part in spec.parts[1:]:
        other, oderivs = _build_with_derivatives(part, counter)
        ma, mb = sde.m, other.m
        if isinstance(spec, Sum):
            new = {k: (sla.block_diag(dF, np.zeros((mb, mb))), sla.block_diag(dP, np.zeros((mb, mb))))
                   for k, (dF, dP) in derivs.items()}
            new.update({k: (sla.block_diag(np.zeros((ma, ma)), dF), sla.block_diag(np.zeros((ma, ma)), dP))
                        for k, (dF, dP) in oderivs.items()})
            sde = combine_sum(sde, other)
        else:
            Ia, Ib = np.eye(ma), np.eye(mb)
            new = {k: (np.kron(dF, Ib), np.kron(dP, other.Pinf)) for k, (dF, dP) in derivs.items()}
            new.update({k: (np.kron(Ia, dF), np.kron(sde.Pinf, dP)) for k, (dF, dP) in oderivs.items()})
            sde = combine_product(sde, other)
        derivs = new
    return sde, derivs


def build_with_derivatives(spec: KernelSpec) -> tuple[LtiSde, SdeDerivatives]:
    """Compile ``spec`` and return log-domain derivatives of ``F`` and ``Pinf``.

    Parameter order follows :func:`kernel_params`.
    """
    sde, derivs = _build_with_derivatives(spec, [0])
    names = tuple(kernel_params(spec))
    dF = np.array([derivs[n][0] for n in names]).reshape(len(names), sde.m, sde.m)
    dP = np.array([derivs[n][1] for n in names]).reshape(len(names), sde.m, sde.m)
    return sde, SdeDerivatives(names=names, dF=dF, dPinf=dP)
