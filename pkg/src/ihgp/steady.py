"""Steady-state filter/smoother quantities and their interpolation over gamma.

For a fixed likelihood variance ``gamma`` the Kalman recursions of a
step-invariant model settle to constant covariances.  :func:`build_grid`
solves them on a log-spaced set of ``gamma`` values once (O(K m^3)); after
that :func:`interp_steady` and :meth:`GammaGrid.stencil` give any
``gamma`` by cubic convolution in ``log gamma``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConditioningError, ConvergenceError, StabilityError
from .ssm import DiscreteModel

KEYS_A = -0.5


def _sym(P):
    return 0.5 * (P + P.T)


def dare_residual(model: DiscreteModel, Pp, gamma) -> float:
    """Frobenius norm of the Riccati equation residual at ``Pp``."""
    return float(np.linalg.norm(riccati_step(model, Pp, gamma) - Pp))


def riccati_step(model: DiscreteModel, Pp, gamma):
    """One predict-update-predict sweep of the Kalman covariance recursion."""
    A, Q, h = model.A, model.Q, model.h
    APh = A @ (Pp @ h)
    return _sym(A @ Pp @ A.T - np.outer(APh, APh) / (h @ Pp @ h + gamma) + Q)


def solve_pp_dare(model: DiscreteModel, gamma: float, tol: float = 1e-12, max_iter: int = 10_000,
                  method: str = "doubling") -> np.ndarray:
    """Stabilising solution of the filtering DARE at likelihood variance ``gamma``.

    ``method='doubling'`` runs the structure-preserving doubling algorithm;
    ``method='schur'`` defers to :func:`scipy.linalg.solve_discrete_are`.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    A, Q, h = np.asarray(model.A), np.asarray(model.Q), np.asarray(model.h)
    m = A.shape[0]
    if math.isinf(gamma):
        return np.array(model.P0, dtype=float)
    if method == "schur":
        return _sym(sla.solve_discrete_are(A.T, h[:, None], Q, np.array([[gamma]])))
    Ak = A.T.copy()
    Gk = np.outer(h, h) / gamma
    Hk = Q.copy()
    eye = np.eye(m)
    change = np.inf
    for _ in range(max_iter):
        W = eye + Gk @ Hk
        try:
            lu = sla.lu_factor(W, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover
            raise ConvergenceError(f"doubling breakdown at gamma={gamma}: {exc}") from exc
        Y = sla.lu_solve(lu, Ak, check_finite=False)
        Z = sla.lu_solve(lu, Gk, check_finite=False)
        H_new = _sym(Hk + Ak.T @ Hk @ Y)
        Gk = _sym(Gk + Ak @ Z @ Ak.T)
        Ak = Ak @ Y
        change = np.linalg.norm(H_new - Hk) / max(np.linalg.norm(H_new), 1e-300)
        Hk = H_new
        if not np.all(np.isfinite(Hk)):
            break
        if change <= tol:
            return Hk
    res = dare_residual(model, Hk, gamma) if np.all(np.isfinite(Hk)) else np.inf
    raise ConvergenceError(f"DARE did not converge at gamma={gamma} (relative change {change:.3g})", residual=res)


def stationary_gain(Pp, h, gamma):
    """Gain ``k = Pp h / (h' Pp h + gamma)``; zero for ``gamma = inf``."""
    Ph = np.asarray(Pp) @ h
    if math.isinf(gamma):
        return np.zeros_like(Ph)
    return Ph / (h @ Ph + gamma)


def solve_stein(M, C, tol: float = 1e-14, max_iter: int = 200):
    """Solve ``X = M X M' + C`` by doubling (requires spectral radius of ``M`` < 1)."""
    X = _sym(np.array(C, dtype=float))
    Mk = np.array(M, dtype=float)
    for _ in range(max_iter):
        inc = Mk @ X @ Mk.T
        X = _sym(X + inc)
        Mk = Mk @ Mk
        if np.linalg.norm(inc) <= tol * max(np.linalg.norm(X), 1e-300):
            return X
    raise ConvergenceError("Stein equation iteration did not converge")


def solve_smoother_pair(model: DiscreteModel, Pf):
    """Stationary smoother gain ``G`` and smoothed covariance ``Ps`` for filter covariance ``Pf``."""
    A, Q = model.A, model.Q
    Pnext = _sym(A @ Pf @ A.T + Q)
    try:
        cf = sla.cho_factor(Pnext)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("A Pf A' + Q is not positive definite") from exc
    G = sla.cho_solve(cf, A @ Pf).T
    C = _sym(Pf - G @ Pnext @ G.T)
    rho = np.max(np.abs(np.linalg.eigvals(G)))
    if rho >= 1.0:
        raise StabilityError(f"smoother gain has spectral radius {rho:.6g} >= 1")
    Ps = solve_stein(G, C)
    return G, Ps


def psd_project(P, slack=1e-8):
    """Symmetrise; clip negative eigenvalues if they exceed ``slack * trace``."""
    P = _sym(P)
    w, V = np.linalg.eigh(P)
    if w.min() < -slack * max(abs(np.trace(P)), 1e-300):
        w = np.clip(w, 0.0, None)
        P = _sym((V * w) @ V.T)
    return P


@dataclass(frozen=True, eq=False)
class SteadyStateSet:
    gamma: float
    Pp: np.ndarray
    k: np.ndarray
    Pf: np.ndarray
    G: np.ndarray
    Ps: np.ndarray


def steady_state(model: DiscreteModel, gamma: float, method: str = "doubling") -> SteadyStateSet:
    """All stationary quantities at one likelihood variance (``gamma = inf`` allowed)."""
    h = np.asarray(model.h)
    if math.isinf(gamma):
        Pinf = np.array(model.P0, dtype=float)
        G, _ = _prior_smoother_gain(model)
        return SteadyStateSet(gamma=math.inf, Pp=Pinf, k=np.zeros(model.m), Pf=Pinf, G=G, Ps=Pinf.copy())
    Pp = solve_pp_dare(model, gamma, method=method)
    k = stationary_gain(Pp, h, gamma)
    Pf = _sym(Pp - np.outer(k, h @ Pp))
    G, Ps = solve_smoother_pair(model, Pf)
    return SteadyStateSet(gamma=float(gamma), Pp=Pp, k=k, Pf=Pf, G=G, Ps=Ps)


def _prior_smoother_gain(model):
    # without data Ps = Pf = Pinf solves the fixed point exactly
    Pinf = np.asarray(model.P0)
    Pnext = _sym(model.A @ Pinf @ model.A.T + model.Q)
    cf = sla.cho_factor(Pnext)
    return sla.cho_solve(cf, model.A @ Pinf).T, Pinf


def keys_weights(t):
    """Cubic-convolution weights for offsets ``t`` in [0, 1] over nodes ``j-1 .. j+2``."""
    t = np.asarray(t, dtype=float)
    a = KEYS_A

    def near(x):
        return (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1

    def far(x):
        return a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a

    return np.stack([far(1 + t), near(t), near(1 - t), far(2 - t)], axis=-1)


@dataclass(eq=False)
class GammaGrid:
    """Steady-state sets on ``K`` log-spaced nodes, an ``inf`` endpoint and exact extras.

    Table layout (``Pp``, ``G``, ``Ps`` stacks): rows ``0..K-1`` are the grid
    nodes, row ``K`` is ``gamma = inf``, rows after that are extra exact nodes.
    """

    model: DiscreteModel
    nodes: np.ndarray
    sets: list
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.log_nodes = np.log(self.nodes)
        self.step = float(self.log_nodes[1] - self.log_nodes[0])
        self._refresh_tables()

    @property
    def K(self) -> int:
        return self.nodes.size

    @property
    def gmin(self) -> float:
        return float(self.nodes[0])

    @property
    def gmax(self) -> float:
        return float(self.nodes[-1])

    def _refresh_tables(self):
        h = np.asarray(self.model.h)
        self.table = list(self.sets)
        self.Pp = np.ascontiguousarray([s.Pp for s in self.table])
        self.G = np.ascontiguousarray([s.G for s in self.table])
        self.Ps = np.ascontiguousarray([s.Ps for s in self.table])
        self.Ph = np.ascontiguousarray(self.Pp @ h)
        self.hPh = np.ascontiguousarray(self.Ph @ h)
        self.hPsh = np.ascontiguousarray((self.Ps @ h) @ h)
        self._exact_rows = {float(g): i for i, g in enumerate(self.nodes)}
        self._exact_rows.update({g: self.K + 1 + i for i, g in enumerate(self.extras)})

    def add_exact(self, gamma: float) -> "GammaGrid":
        """Add ``gamma`` as an exactly solved node (no-op if already present)."""
        gamma = float(gamma)
        if gamma in self.extras or gamma in set(self.nodes.tolist()):
            return self
        st = steady_state(self.model, gamma)
        self.extras[gamma] = st
        self.sets.append(st)
        self._refresh_tables()
        return self

    def stencil(self, gamma):
        """Row indices ``(n, 4)`` and weights ``(n, 4)`` into the tables for each ``gamma``."""
        g = np.atleast_1d(np.asarray(gamma, dtype=float))
        n, K = g.size, self.K
        idx = np.zeros((n, 4), dtype=np.intp)
        w = np.zeros((n, 4))
        inf = np.isinf(g)
        idx[inf, 0] = K
        w[inf, 0] = 1.0
        exact = np.zeros(n, dtype=bool)
        for val, row in self._exact_rows.items():
            hit = g == val
            idx[hit, 0] = row
            w[hit, 0] = 1.0
            exact |= hit
        for hit, row in ((~inf & ~exact & (g <= self.nodes[0]), 0), (~inf & ~exact & (g >= self.nodes[-1]), K - 1)):
            idx[hit, 0] = row
            w[hit, 0] = 1.0
            exact |= hit
        rest = ~(inf | exact)
        if np.any(rest):
            u = np.clip(np.log(g[rest]), self.log_nodes[0], self.log_nodes[-1])
            s = (u - self.log_nodes[0]) / self.step
            j = np.clip(np.floor(s).astype(np.intp), 0, K - 2)
            t = np.clip(s - j, 0.0, 1.0)
            kw = keys_weights(t)
            cols = j[:, None] + np.arange(-1, 3)
            # Keys boundary extrapolation: c_{-1} = 3c_0 - 3c_1 + c_2, c_K = 3c_{K-1} - 3c_{K-2} + c_{K-3}
            full = np.zeros((cols.shape[0], K))
            rows = np.arange(cols.shape[0])
            for c in range(4):
                col = cols[:, c]
                lo, hi = col < 0, col > K - 1
                mid = ~(lo | hi)
                np.add.at(full, (rows[mid], col[mid]), kw[mid, c])
                for off, coef in ((0, 3.0), (1, -3.0), (2, 1.0)):
                    np.add.at(full, (rows[lo], np.full(lo.sum(), off)), coef * kw[lo, c])
                    np.add.at(full, (rows[hi], np.full(hi.sum(), K - 1 - off)), coef * kw[hi, c])
            # at most four nodes are non-zero per row
            order = np.argsort(-np.abs(full), axis=1, kind="stable")[:, :4]
            idx[rest] = order
            w[rest] = np.take_along_axis(full, order, axis=1)
        return idx, w

    def stencil1(self, g: float):
        """Scalar version of :meth:`stencil`; returns ``(idx[4], w[4])`` for one ``gamma``."""
        K = self.K
        idx = np.zeros(4, dtype=np.intp)
        w = np.zeros(4)
        if math.isinf(g):
            idx[0], w[0] = K, 1.0
            return idx, w
        row = self._exact_rows.get(g)
        if row is None and g <= self.gmin:
            row = 0
        elif row is None and g >= self.gmax:
            row = K - 1
        if row is not None:
            idx[0], w[0] = row, 1.0
            return idx, w
        s = (math.log(g) - self.log_nodes[0]) / self.step
        j = min(max(int(s), 0), K - 2)
        t = min(max(s - j, 0.0), 1.0)
        acc = {}
        for c, wc in zip(range(j - 1, j + 3), keys_weights(t)):
            if c < 0:
                for off, coef in ((0, 3.0), (1, -3.0), (2, 1.0)):
                    acc[off] = acc.get(off, 0.0) + coef * wc
            elif c > K - 1:
                for off, coef in ((0, 3.0), (1, -3.0), (2, 1.0)):
                    acc[K - 1 - off] = acc.get(K - 1 - off, 0.0) + coef * wc
            else:
                acc[c] = acc.get(c, 0.0) + wc
        top = sorted(acc.items(), key=lambda kv: -abs(kv[1]))[:4]
        for i, (r, v) in enumerate(top):
            idx[i], w[i] = r, v
        return idx, w

    def interp_scalar(self, values, gamma):
        idx, w = self.stencil(gamma)
        return np.sum(w * values[idx], axis=1)


def build_grid(model: DiscreteModel, K: int = 32, gmin: float = 1e-2, gmax: float = 1e3,
               extras=(), method: str = "doubling") -> GammaGrid:
    """Solve the steady-state sets on ``K`` log-spaced nodes in ``[gmin, gmax]``."""
    if K < 4:
        raise ValueError(f"grid needs K >= 4 nodes, got {K}")
    if not (0 < gmin < gmax):
        raise ValueError(f"need 0 < gmin < gmax, got {gmin}, {gmax}")
    nodes = np.geomspace(gmin, gmax, K)

    def solve(g):
        try:
            return steady_state(model, g, method=method)
        except ConvergenceError as exc:
            raise ConvergenceError(f"grid node gamma={g:.6g}: {exc}", residual=exc.residual) from exc

    workers = max(1, int(os.environ.get("IHGP_THREADS", "1") or 1))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sets = list(pool.map(solve, nodes))
    else:
        sets = [solve(g) for g in nodes]
    sets.append(steady_state(model, math.inf))
    grid = GammaGrid(model=model, nodes=nodes, sets=sets)
    for g in extras:
        grid.add_exact(g)
    return grid


def interp_steady(grid: GammaGrid, gamma: float) -> SteadyStateSet:
    """Interpolated steady-state set at ``gamma`` (clamped to the grid range; ``inf`` exact).

    Queries landing on a stored node return the stored set unchanged.
    """
    idx, w = grid.stencil(gamma)
    idx, w = idx[0], w[0]
    if w[0] == 1.0 and not np.any(w[1:]):
        return grid.table[idx[0]]
    h = np.asarray(grid.model.h)
    Pp = psd_project(np.tensordot(w, grid.Pp[idx], axes=1))
    Ps = psd_project(np.tensordot(w, grid.Ps[idx], axes=1))
    G = np.tensordot(w, grid.G[idx], axes=1)
    k = stationary_gain(Pp, h, float(gamma))
    Pf = _sym(Pp - np.outer(k, h @ Pp))
    return SteadyStateSet(gamma=float(gamma), Pp=Pp, k=k, Pf=Pf, G=G, Ps=Ps)
