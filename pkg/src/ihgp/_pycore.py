"""Pure-numpy kernels; same signatures as the compiled ``_core`` extension.

Every kernel writes into caller-allocated output arrays.  Failures are
reported by returning the offending step index (``-1`` means success) so
that the calling module can raise its own exception type.
"""

import math

import numpy as np

LOG2PI = math.log(2.0 * math.pi)


def kf_forward(A, Q, h, P0, y, r, mf, Pf, mp, Pp):
    """Kalman filter with per-step noise ``r`` (NaN ``y`` or infinite ``r`` skips the update)."""
    n, m = mf.shape
    ll = 0.0
    m_prev = np.zeros(m)
    P_prev = None
    for i in range(n):
        if i == 0:
            mpred = np.zeros(m)
            Ppred = np.array(P0, dtype=float)
        else:
            mpred = A @ m_prev
            Ppred = A @ P_prev @ A.T + Q
            Ppred = 0.5 * (Ppred + Ppred.T)
        mp[i] = mpred
        if Pp is not None:
            Pp[i] = Ppred
        yi, ri = y[i], r[i]
        if math.isnan(yi) or math.isinf(ri):
            m_prev, P_prev = mpred, Ppred
        else:
            Ph = Ppred @ h
            s = float(h @ Ph) + ri
            if not s > 0:
                return ll, i
            v = yi - float(h @ mpred)
            k = Ph / s
            m_prev = mpred + k * v
            P_prev = Ppred - np.outer(k, Ph)
            P_prev = 0.5 * (P_prev + P_prev.T)
            ll -= 0.5 * (LOG2PI + math.log(s) + v * v / s)
        mf[i] = m_prev
        Pf[i] = P_prev
    return ll, -1


def rts_backward(A, Q, h, mf, Pf, ms, mvar, Ps):
    """RTS smoother; the predictive covariance is recomputed from ``Pf``."""
    n, m = mf.shape
    m_next = mf[n - 1].copy()
    P_next = Pf[n - 1].copy()
    ms[n - 1] = m_next
    mvar[n - 1] = h @ P_next @ h
    if Ps is not None:
        Ps[n - 1] = P_next
    for i in range(n - 2, -1, -1):
        T = A @ Pf[i]
        Ppred = T @ A.T + Q
        Ppred = 0.5 * (Ppred + Ppred.T)
        try:
            c = np.linalg.cholesky(Ppred)
        except np.linalg.LinAlgError:
            return i
        Gt = np.linalg.solve(c.T, np.linalg.solve(c, T))
        G = Gt.T
        m_next = mf[i] + G @ (m_next - A @ mf[i])
        P_next = Pf[i] + G @ (P_next - Ppred) @ Gt
        P_next = 0.5 * (P_next + P_next.T)
        ms[i] = m_next
        mvar[i] = h @ P_next @ h
        if Ps is not None:
            Ps[i] = P_next
    return -1


def ihgp_forward(A, h, Ph_nodes, hPh_nodes, idx, w, eta, gam, mf, mu_t, s2_t):
    """Infinite-horizon forward pass for known site parameters ``(eta, gam)``.

    ``idx``/``w`` hold the interpolation stencil of the predictive covariance
    at step ``i`` (i.e. evaluated at the previous step's ``gam``).
    """
    n, m = mf.shape
    ll = 0.0
    m_prev = np.zeros(m)
    for i in range(n):
        mpred = A @ m_prev if i > 0 else np.zeros(m)
        Ph = w[i] @ Ph_nodes[idx[i]]
        s2 = float(w[i] @ hPh_nodes[idx[i]])
        mu = float(h @ mpred)
        mu_t[i] = mu
        s2_t[i] = s2
        g = gam[i]
        if math.isinf(g):
            m_prev = mpred
        else:
            s = s2 + g
            v = eta[i] - mu
            m_prev = mpred + Ph * (v / s)
            ll -= 0.5 * (LOG2PI + math.log(s) + v * v / s)
        mf[i] = m_prev
    return ll


def ihgp_backward(A, G_nodes, idx, w, mf, ms):
    n, m = mf.shape
    ms[n - 1] = mf[n - 1]
    for i in range(n - 2, -1, -1):
        d = ms[i + 1] - A @ mf[i]
        acc = mf[i].copy()
        for j in range(idx.shape[1]):
            if w[i, j] != 0.0:
                acc += w[i, j] * (G_nodes[idx[i, j]] @ d)
        ms[i] = acc


def steady_filter(A, h, k, s, y, mf):
    """Time-invariant filter; returns the steady-state log likelihood."""
    n, m = mf.shape
    ll = 0.0
    m_prev = np.zeros(m)
    logs = math.log(s)
    for i in range(n):
        mpred = A @ m_prev
        if math.isnan(y[i]):
            m_prev = mpred
        else:
            v = y[i] - float(h @ mpred)
            m_prev = mpred + k * v
            ll -= 0.5 * (LOG2PI + logs + v * v / s)
        mf[i] = m_prev
    return ll


def steady_grad(A, h, k, s, dA, dk, ds, y, grad):
    """Steady-state negative log likelihood and its gradient (written into ``grad``)."""
    p = dA.shape[0]
    m = A.shape[0]
    nll = 0.0
    grad[:] = 0.0
    mcur = np.zeros(m)
    dm = np.zeros((p, m))
    logs = math.log(s)
    for i in range(y.shape[0]):
        mpred = A @ mcur
        dmpred = dA @ mcur + dm @ A.T
        if math.isnan(y[i]):
            mcur, dm = mpred, dmpred
            continue
        v = y[i] - float(h @ mpred)
        dv = -(dmpred @ h)
        mcur = mpred + k * v
        dm = dmpred + dk * v + np.outer(dv, k)
        nll += 0.5 * (LOG2PI + logs + v * v / s)
        grad += 0.5 * ds / s + v * dv / s - v * v * ds / (2.0 * s * s)
    return nll
