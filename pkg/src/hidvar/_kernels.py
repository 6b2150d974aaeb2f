"""Compiled inner loops (numba).

Only the strictly sequential recursions live here; everything that can be
vectorised over time stays in numpy.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def var_recursion(A, noise):
    """w[t] = A w[t-1] + noise[t], starting from w[-1] = 0."""
    L, K = noise.shape
    out = np.empty((L, K))
    prev = np.zeros(K)
    for t in range(L):
        for i in range(K):
            acc = noise[t, i]
            for j in range(K):
                acc += A[i, j] * prev[j]
            out[t, i] = acc
        for i in range(K):
            prev[i] = out[t, i]
    return out


@njit(cache=True)
def _inverse(M, out, work):
    """Gauss-Jordan inverse with partial pivoting into ``out``; returns False
    when a pivot vanishes. ``work`` is a scratch copy of M."""
    d = M.shape[0]
    for i in range(d):
        for j in range(d):
            work[i, j] = M[i, j]
            out[i, j] = 1.0 if i == j else 0.0
    for c in range(d):
        p = c
        best = abs(work[c, c])
        for r in range(c + 1, d):
            if abs(work[r, c]) > best:
                best = abs(work[r, c])
                p = r
        if not (best > 0.0):
            return False
        if p != c:
            for j in range(d):
                tmp = work[c, j]
                work[c, j] = work[p, j]
                work[p, j] = tmp
                tmp = out[c, j]
                out[c, j] = out[p, j]
                out[p, j] = tmp
        piv = work[c, c]
        for j in range(d):
            work[c, j] /= piv
            out[c, j] /= piv
        for r in range(d):
            if r != c:
                f = work[r, c]
                if f != 0.0:
                    for j in range(d):
                        work[r, j] -= f * work[c, j]
                        out[r, j] -= f * out[c, j]
    return True


@njit(cache=True)
def _matmul(A, B, out):
    n, m = A.shape
    p = B.shape[1]
    for i in range(n):
        for j in range(p):
            acc = 0.0
            for k in range(m):
                acc += A[i, k] * B[k, j]
            out[i, j] = acc


@njit(cache=True)
def _matmul_bt(A, B, out):
    """out = A @ B.T"""
    n, m = A.shape
    p = B.shape[0]
    for i in range(n):
        for j in range(p):
            acc = 0.0
            for k in range(m):
                acc += A[i, k] * B[j, k]
            out[i, j] = acc


@njit(cache=True)
def _symmetrize(P):
    d = P.shape[0]
    for i in range(d):
        for j in range(i + 1, d):
            v = 0.5 * (P[i, j] + P[j, i])
            P[i, j] = v
            P[j, i] = v


@njit(cache=True)
def kalman_smoother(E, C, m1, P1, drift, q_var, obs, r_prec):
    """Filter + RTS smoother for the time-varying LDS

        z[0] ~ N(m1, P1)
        z[k] = E z[k-1] + drift[k] + eta,      eta ~ N(0, diag(q_var[k]))   k >= 1
        obs[k] = C z[k] + eps,                 eps ~ N(0, diag(1 / r_prec[k])) k <= n-2

    The last state carries no observation. Returns smoothed means (n, d),
    covariances (n, d, d) and lag-one cross covariances Cov(z[k], z[k-1])
    (n, d, d; entry 0 is zero), plus a failure index (-1 when fine).
    """
    n = drift.shape[0]
    d = E.shape[0]
    p = C.shape[0]
    mf = np.zeros((n, d))
    Pf = np.zeros((n, d, d))
    mp = np.zeros((n, d))
    Pp = np.zeros((n, d, d))
    H = np.zeros((d, d))
    M = np.zeros((d, d))
    Minv = np.zeros((d, d))
    work = np.zeros((d, d))
    T1 = np.zeros((d, d))
    T2 = np.zeros((d, d))
    J = np.zeros((d, d))
    g = np.zeros(d)
    fail = -1

    for k in range(n):
        if k == 0:
            mp[0] = m1
            Pp[0] = P1
        else:
            for i in range(d):
                acc = drift[k, i]
                for j in range(d):
                    acc += E[i, j] * mf[k - 1, j]
                mp[k, i] = acc
            _matmul(E, Pf[k - 1], T1)
            _matmul_bt(T1, E, Pp[k])
            for i in range(d):
                Pp[k, i, i] += q_var[k, i]
            _symmetrize(Pp[k])
        if k < n - 1:
            # information-form update: P_post = (I + Pp C'RC)^{-1} Pp
            for a in range(d):
                for b in range(d):
                    acc = 0.0
                    for c in range(p):
                        acc += C[c, a] * r_prec[k, c] * C[c, b]
                    H[a, b] = acc
            _matmul(Pp[k], H, M)
            for i in range(d):
                M[i, i] += 1.0
            if not _inverse(M, Minv, work):
                if fail < 0:
                    fail = k
                break
            _matmul(Minv, Pp[k], Pf[k])
            _symmetrize(Pf[k])
            # gain term C'R (obs - C mp)
            for a in range(d):
                acc = 0.0
                for c in range(p):
                    pred = 0.0
                    for b in range(d):
                        pred += C[c, b] * mp[k, b]
                    acc += C[c, a] * r_prec[k, c] * (obs[k, c] - pred)
                g[a] = acc
            for i in range(d):
                acc = mp[k, i]
                for j in range(d):
                    acc += Pf[k, i, j] * g[j]
                mf[k, i] = acc
        else:
            mf[k] = mp[k]
            Pf[k] = Pp[k]
        for i in range(d):
            if not (Pf[k, i, i] > 0.0) or not np.isfinite(mf[k, i]):
                if fail < 0:
                    fail = k

    ms = mf.copy()
    Ps = Pf.copy()
    cross = np.zeros((n, d, d))
    if fail >= 0:
        return ms, Ps, cross, fail
    Pinv = np.zeros((d, d))
    for k in range(n - 2, -1, -1):
        # J = Pf[k] E' Pp[k+1]^{-1}
        if not _inverse(Pp[k + 1], Pinv, work):
            return ms, Ps, cross, k + 1
        _matmul_bt(Pf[k], E, T1)
        _matmul(T1, Pinv, J)
        for i in range(d):
            acc = mf[k, i]
            for j in range(d):
                acc += J[i, j] * (ms[k + 1, j] - mp[k + 1, j])
            ms[k, i] = acc
        for i in range(d):
            for j in range(d):
                T1[i, j] = Ps[k + 1, i, j] - Pp[k + 1, i, j]
        _matmul(J, T1, T2)
        _matmul_bt(T2, J, T1)
        for i in range(d):
            for j in range(d):
                Ps[k, i, j] = Pf[k, i, j] + T1[i, j]
        _symmetrize(Ps[k])
        _matmul_bt(Ps[k + 1], J, cross[k + 1])
    return ms, Ps, cross, fail
