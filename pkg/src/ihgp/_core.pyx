# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops; mirrors ``_pycore`` kernel for kernel."""

import numpy as np
from libc.math cimport log, sqrt, isnan, isinf, M_PI

cdef double LOG2PI = log(2.0 * M_PI)


cdef inline void _matmul(const double[:, ::1] X, const double[:, ::1] Y, double[:, ::1] Z, Py_ssize_t m) noexcept nogil:
    # Z = X @ Y
    cdef Py_ssize_t i, j, k
    cdef double xik
    for i in range(m):
        for j in range(m):
            Z[i, j] = 0.0
        for k in range(m):
            xik = X[i, k]
            for j in range(m):
                Z[i, j] += xik * Y[k, j]


cdef inline void _matmul_bt(const double[:, ::1] X, const double[:, ::1] Y, double[:, ::1] Z, Py_ssize_t m) noexcept nogil:
    # Z = X @ Y.T
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(m):
        for j in range(m):
            acc = 0.0
            for k in range(m):
                acc += X[i, k] * Y[j, k]
            Z[i, j] = acc


cdef inline void _matvec(const double[:, ::1] X, const double[::1] v, double[::1] out, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double acc
    for i in range(m):
        acc = 0.0
        for k in range(m):
            acc += X[i, k] * v[k]
        out[i] = acc


cdef inline double _dot(const double[::1] a, const double[::1] b, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(m):
        acc += a[i] * b[i]
    return acc


cdef inline void _symmetrize(double[:, ::1] P, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double v
    for i in range(m):
        for j in range(i + 1, m):
            v = 0.5 * (P[i, j] + P[j, i])
            P[i, j] = v
            P[j, i] = v


cdef inline int _cholesky(double[:, ::1] P, double[:, ::1] L, Py_ssize_t m) noexcept nogil:
    # lower factor of P into L; returns 0 on success
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(m):
        for j in range(i + 1):
            acc = P[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                if acc <= 0.0:
                    return 1
                L[i, i] = sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
        for j in range(i + 1, m):
            L[i, j] = 0.0
    return 0


cdef inline void _chol_solve(const double[:, ::1] L, double[:, ::1] B, Py_ssize_t m) noexcept nogil:
    # overwrite B with (L L')^{-1} B, column-block form over rows
    cdef Py_ssize_t i, j, k
    cdef double lik
    for i in range(m):
        for k in range(i):
            lik = L[i, k]
            for j in range(m):
                B[i, j] -= lik * B[k, j]
        lik = 1.0 / L[i, i]
        for j in range(m):
            B[i, j] *= lik
    for i in range(m - 1, -1, -1):
        for k in range(i + 1, m):
            lik = L[k, i]
            for j in range(m):
                B[i, j] -= lik * B[k, j]
        lik = 1.0 / L[i, i]
        for j in range(m):
            B[i, j] *= lik


def kf_forward(const double[:, ::1] A, const double[:, ::1] Q, const double[::1] h,
               const double[:, ::1] P0, const double[::1] y, const double[::1] r,
               double[:, ::1] mf, double[:, :, ::1] Pf, double[:, ::1] mp, double[:, :, ::1] Pp):
    cdef Py_ssize_t n = mf.shape[0], m = mf.shape[1]
    cdef Py_ssize_t i, a, b
    cdef double ll = 0.0, s, v, yi, ri
    cdef bint store_pp = Pp is not None
    cdef double[:, ::1] T = np.zeros((m, m))
    cdef double[:, ::1] Ppred = np.zeros((m, m))
    cdef double[::1] mpred = np.zeros(m)
    cdef double[::1] Ph = np.zeros(m)
    with nogil:
        for i in range(n):
            if i == 0:
                for a in range(m):
                    mpred[a] = 0.0
                    for b in range(m):
                        Ppred[a, b] = P0[a, b]
            else:
                _matvec(A, mf[i - 1], mpred, m)
                _matmul(A, Pf[i - 1], T, m)
                _matmul_bt(T, A, Ppred, m)
                for a in range(m):
                    for b in range(m):
                        Ppred[a, b] += Q[a, b]
                _symmetrize(Ppred, m)
            for a in range(m):
                mp[i, a] = mpred[a]
            if store_pp:
                for a in range(m):
                    for b in range(m):
                        Pp[i, a, b] = Ppred[a, b]
            yi = y[i]
            ri = r[i]
            if isnan(yi) or isinf(ri):
                for a in range(m):
                    mf[i, a] = mpred[a]
                    for b in range(m):
                        Pf[i, a, b] = Ppred[a, b]
                continue
            _matvec(Ppred, h, Ph, m)
            s = _dot(h, Ph, m) + ri
            if not s > 0.0:
                with gil:
                    return ll, i
            v = yi - _dot(h, mpred, m)
            for a in range(m):
                mf[i, a] = mpred[a] + Ph[a] * (v / s)
                for b in range(m):
                    Pf[i, a, b] = Ppred[a, b] - Ph[a] * Ph[b] / s
            _symmetrize(Pf[i], m)
            ll -= 0.5 * (LOG2PI + log(s) + v * v / s)
    return ll, -1


def rts_backward(const double[:, ::1] A, const double[:, ::1] Q, const double[::1] h,
                 const double[:, ::1] mf, const double[:, :, ::1] Pf,
                 double[:, ::1] ms, double[::1] mvar, double[:, :, ::1] Ps):
    cdef Py_ssize_t n = mf.shape[0], m = mf.shape[1]
    cdef Py_ssize_t i, a, b, c
    cdef bint store_ps = Ps is not None
    cdef double acc, gba
    cdef double[:, ::1] T = np.zeros((m, m))
    cdef double[:, ::1] Ppred = np.zeros((m, m))
    cdef double[:, ::1] Lc = np.zeros((m, m))
    cdef double[:, ::1] D = np.zeros((m, m))
    cdef double[:, ::1] E = np.zeros((m, m))
    cdef double[:, ::1] Pnext = np.zeros((m, m))
    cdef double[::1] mnext = np.zeros(m)
    cdef double[::1] d = np.zeros(m)
    cdef double[::1] tmp = np.zeros(m)
    with nogil:
        for a in range(m):
            mnext[a] = mf[n - 1, a]
            ms[n - 1, a] = mnext[a]
            for b in range(m):
                Pnext[a, b] = Pf[n - 1, a, b]
        _matvec(Pnext, h, tmp, m)
        mvar[n - 1] = _dot(h, tmp, m)
        if store_ps:
            for a in range(m):
                for b in range(m):
                    Ps[n - 1, a, b] = Pnext[a, b]
        for i in range(n - 2, -1, -1):
            _matmul(A, Pf[i], T, m)
            _matmul_bt(T, A, Ppred, m)
            for a in range(m):
                for b in range(m):
                    Ppred[a, b] += Q[a, b]
            _symmetrize(Ppred, m)
            if _cholesky(Ppred, Lc, m) != 0:
                with gil:
                    return i
            # T <- G' = Ppred^{-1} A Pf_i
            _chol_solve(Lc, T, m)
            _matvec(A, mf[i], tmp, m)
            for a in range(m):
                d[a] = mnext[a] - tmp[a]
            for a in range(m):
                acc = mf[i, a]
                for b in range(m):
                    acc += T[b, a] * d[b]
                mnext[a] = acc
                ms[i, a] = acc
            for a in range(m):
                for b in range(m):
                    D[a, b] = Pnext[a, b] - Ppred[a, b]
            # E = G D
            for a in range(m):
                for c in range(m):
                    E[a, c] = 0.0
            for b in range(m):
                for a in range(m):
                    gba = T[b, a]
                    for c in range(m):
                        E[a, c] += gba * D[b, c]
            # Pnext = Pf_i + E G'
            _matmul(E, T, Pnext, m)
            for a in range(m):
                for b in range(m):
                    Pnext[a, b] += Pf[i, a, b]
            _symmetrize(Pnext, m)
            _matvec(Pnext, h, tmp, m)
            mvar[i] = _dot(h, tmp, m)
            if store_ps:
                for a in range(m):
                    for b in range(m):
                        Ps[i, a, b] = Pnext[a, b]
    return -1


def ihgp_forward(const double[:, ::1] A, const double[::1] h, const double[:, ::1] Ph_nodes,
                 const double[::1] hPh_nodes, const Py_ssize_t[:, ::1] idx, const double[:, ::1] w,
                 const double[::1] eta, const double[::1] gam,
                 double[:, ::1] mf, double[::1] mu_t, double[::1] s2_t):
    cdef Py_ssize_t n = mf.shape[0], m = mf.shape[1], nw = idx.shape[1]
    cdef Py_ssize_t i, a, j
    cdef Py_ssize_t node
    cdef double ll = 0.0, s2, mu, s, v, wij, g
    cdef double[::1] mpred = np.zeros(m)
    cdef double[::1] Ph = np.zeros(m)
    with nogil:
        for i in range(n):
            if i == 0:
                for a in range(m):
                    mpred[a] = 0.0
            else:
                _matvec(A, mf[i - 1], mpred, m)
            for a in range(m):
                Ph[a] = 0.0
            s2 = 0.0
            for j in range(nw):
                wij = w[i, j]
                if wij != 0.0:
                    node = idx[i, j]
                    s2 += wij * hPh_nodes[node]
                    for a in range(m):
                        Ph[a] += wij * Ph_nodes[node, a]
            mu = _dot(h, mpred, m)
            mu_t[i] = mu
            s2_t[i] = s2
            g = gam[i]
            if isinf(g):
                for a in range(m):
                    mf[i, a] = mpred[a]
                continue
            s = s2 + g
            v = eta[i] - mu
            for a in range(m):
                mf[i, a] = mpred[a] + Ph[a] * (v / s)
            ll -= 0.5 * (LOG2PI + log(s) + v * v / s)
    return ll


def ihgp_backward(const double[:, ::1] A, const double[:, :, ::1] G_nodes, const Py_ssize_t[:, ::1] idx,
                  const double[:, ::1] w, const double[:, ::1] mf, double[:, ::1] ms):
    cdef Py_ssize_t n = mf.shape[0], m = mf.shape[1], nw = idx.shape[1]
    cdef Py_ssize_t i, a, b, j
    cdef Py_ssize_t node
    cdef double wij, acc
    cdef double[::1] d = np.zeros(m)
    cdef double[::1] tmp = np.zeros(m)
    with nogil:
        for a in range(m):
            ms[n - 1, a] = mf[n - 1, a]
        for i in range(n - 2, -1, -1):
            _matvec(A, mf[i], tmp, m)
            for a in range(m):
                d[a] = ms[i + 1, a] - tmp[a]
                ms[i, a] = mf[i, a]
            for j in range(nw):
                wij = w[i, j]
                if wij != 0.0:
                    node = idx[i, j]
                    for a in range(m):
                        acc = 0.0
                        for b in range(m):
                            acc += G_nodes[node, a, b] * d[b]
                        ms[i, a] += wij * acc


def steady_filter(const double[:, ::1] A, const double[::1] h, const double[::1] k, double s,
                  const double[::1] y, double[:, ::1] mf):
    cdef Py_ssize_t n = mf.shape[0], m = mf.shape[1]
    cdef Py_ssize_t i, a
    cdef double ll = 0.0, v, logs = log(s)
    cdef double[::1] mpred = np.zeros(m)
    cdef double[::1] mcur = np.zeros(m)
    with nogil:
        for i in range(n):
            _matvec(A, mcur, mpred, m)
            if isnan(y[i]):
                for a in range(m):
                    mcur[a] = mpred[a]
            else:
                v = y[i] - _dot(h, mpred, m)
                for a in range(m):
                    mcur[a] = mpred[a] + k[a] * v
                ll -= 0.5 * (LOG2PI + logs + v * v / s)
            for a in range(m):
                mf[i, a] = mcur[a]
    return ll


def steady_grad(const double[:, ::1] A, const double[::1] h, const double[::1] k, double s,
                const double[:, :, ::1] dA, const double[:, ::1] dk, const double[::1] ds,
                const double[::1] y, double[::1] grad):
    cdef Py_ssize_t n = y.shape[0], m = A.shape[0], p = dA.shape[0]
    cdef Py_ssize_t i, a, b, j
    cdef double nll = 0.0, v, dv, acc, logs = log(s)
    cdef double[::1] mcur = np.zeros(m)
    cdef double[::1] mpred = np.zeros(m)
    cdef double[:, ::1] dm = np.zeros((p, m))
    cdef double[:, ::1] dmpred = np.zeros((p, m))
    with nogil:
        for j in range(p):
            grad[j] = 0.0
        for i in range(n):
            _matvec(A, mcur, mpred, m)
            for j in range(p):
                for a in range(m):
                    acc = 0.0
                    for b in range(m):
                        acc += dA[j, a, b] * mcur[b] + A[a, b] * dm[j, b]
                    dmpred[j, a] = acc
            if isnan(y[i]):
                for a in range(m):
                    mcur[a] = mpred[a]
                for j in range(p):
                    for a in range(m):
                        dm[j, a] = dmpred[j, a]
                continue
            v = y[i] - _dot(h, mpred, m)
            for a in range(m):
                mcur[a] = mpred[a] + k[a] * v
            nll += 0.5 * (LOG2PI + logs + v * v / s)
            for j in range(p):
                dv = -_dot(h, dmpred[j], m)
                for a in range(m):
                    dm[j, a] = dmpred[j, a] + dk[j, a] * v + k[a] * dv
                grad[j] += 0.5 * ds[j] / s + v * dv / s - v * v * ds[j] / (2.0 * s * s)
    return nll
