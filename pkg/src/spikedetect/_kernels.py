"""Compiled Kalman recursions shared by the ARIMA likelihood and the smoother.

All system matrices are time invariant. Arrays are float64 and C-contiguous.
"""

import numpy as np
from numba import njit

# status codes returned by kalman_filter
OK = 0
DEGENERATE = 1


@njit(cache=True)
def arma_system(phi, theta):
    """Companion (Harvey) form of an ARMA(p, q) process.

    ``theta`` follows the ``1 - theta_1 B - ...`` sign convention, so the
    selection vector carries ``-theta``.
    """
    p = phi.size
    q = theta.size
    m = max(p, q + 1)
    T = np.zeros((m, m))
    for i in range(p):
        T[i, 0] = phi[i]
    for i in range(m - 1):
        T[i, i + 1] = 1.0
    R = np.zeros(m)
    R[0] = 1.0
    for i in range(q):
        R[i + 1] = -theta[i]
    return T, R


@njit(cache=True)
def lyapunov(T, RQR):
    """Solve ``P = T P T' + RQR`` via the Kronecker-product linear system."""
    m = T.shape[0]
    A = np.eye(m * m) - np.kron(T, T)
    vec = np.linalg.solve(A, RQR.copy().reshape(m * m))
    P = vec.reshape((m, m))
    return 0.5 * (P + P.T)


@njit(cache=True)
def kalman_filter(y, T, Z, RQR, H, a1, P1, floor):
    n = y.size
    m = T.shape[0]
    a = np.empty((n, m))
    P = np.empty((n, m, m))
    v = np.empty(n)
    F = np.empty(n)
    K = np.zeros((n, m))
    skip = np.zeros(n, dtype=np.bool_)
    at = a1.copy()
    Pt = P1.copy()
    PZ = np.empty(m)
    kt = np.empty(m)
    TP = np.empty((m, m))
    L = np.empty((m, m))
    anew = np.empty(m)
    loglik = 0.0
    status = OK
    log2pi = np.log(2.0 * np.pi)
    for t in range(n):
        a[t] = at
        P[t] = Pt
        f = H
        vt = y[t]
        for i in range(m):
            s = 0.0
            for j in range(m):
                s += Pt[i, j] * Z[j]
            PZ[i] = s
            f += Z[i] * s
            vt -= Z[i] * at[i]
        v[t] = vt
        F[t] = f
        informative = f > floor
        if not informative:
            # a perfectly predicted observation carries no information
            if abs(vt) > 1e-10 * (1.0 + abs(y[t])):
                status = DEGENERATE
                break
            skip[t] = True
        for i in range(m):
            s = 0.0
            for j in range(m):
                s += T[i, j] * PZ[j]
            kt[i] = s / f if informative else 0.0
            K[t, i] = kt[i]
        for i in range(m):
            s = 0.0
            for j in range(m):
                s += T[i, j] * at[j]
            anew[i] = s + kt[i] * vt
            for j in range(m):
                L[i, j] = T[i, j] - kt[i] * Z[j]
                s2 = 0.0
                for k in range(m):
                    s2 += T[i, k] * Pt[k, j]
                TP[i, j] = s2
        for i in range(m):
            at[i] = anew[i]
            for j in range(i, m):
                s = 0.0
                for k in range(m):
                    s += TP[i, k] * L[j, k]
                Pt[i, j] = s + RQR[i, j]
        for i in range(m):
            for j in range(i):
                Pt[i, j] = Pt[j, i]
        if informative:
            loglik += -0.5 * (log2pi + np.log(f) + vt * vt / f)
    return a, P, v, F, K, skip, loglik, status


@njit(cache=True)
def kalman_smoother(T, Z, a, P, v, F, K, skip):
    n, m = a.shape
    alpha = np.empty((n, m))
    V = np.empty((n, m, m))
    rs = np.empty((n, m))
    Ns = np.empty((n, m, m))
    u = np.zeros(n)
    D = np.zeros(n)
    r = np.zeros(m)
    N = np.zeros((m, m))
    for t in range(n - 1, -1, -1):
        if skip[t]:
            r = T.T @ r
            N = T.T @ N @ T
        else:
            kt = K[t]
            finv = 1.0 / F[t]
            u[t] = v[t] * finv - kt @ r
            D[t] = finv + kt @ N @ kt
            L = T - np.outer(kt, Z)
            r = Z * (v[t] * finv) + L.T @ r
            N = np.outer(Z, Z) * finv + L.T @ N @ L
            N = 0.5 * (N + N.T)
        rs[t] = r
        Ns[t] = N
        alpha[t] = a[t] + P[t] @ r
        Vt = P[t] - P[t] @ N @ P[t]
        V[t] = 0.5 * (Vt + Vt.T)
    return alpha, V, rs, Ns, u, D


@njit(cache=True)
def arma_filter_unit(w, phi, theta):
    """Filter a zero-mean ARMA series with unit innovation variance.

    Returns innovations, their (unit-scale) variances and the status code.
    """
    T, R = arma_system(phi, theta)
    m = T.shape[0]
    RQR = np.outer(R, R)
    P1 = lyapunov(T, RQR)
    Z = np.zeros(m)
    Z[0] = 1.0
    a1 = np.zeros(m)
    a, P, v, F, K, skip, ll, status = kalman_filter(w, T, Z, RQR, 0.0, a1, P1, 1e-12)
    return v, F, status


@njit(cache=True)
def arma_concentrated(w, phi, theta):
    """Sum of log F_t and of v_t^2 / F_t under unit innovation variance."""
    v, F, status = arma_filter_unit(w, phi, theta)
    if status != OK:
        return np.nan, np.nan
    slf = 0.0
    ssq = 0.0
    for t in range(w.size):
        slf += np.log(F[t])
        ssq += v[t] * v[t] / F[t]
    return slf, ssq


@njit(cache=True)
def pacf_to_coef(u):
    """Map unconstrained reals to a stationary polynomial via partial autocorrelations."""
    k = u.size
    r = np.tanh(u)
    phi = np.zeros(k)
    tmp = np.zeros(k)
    for j in range(k):
        phi[j] = r[j]
        for i in range(j):
            phi[i] = tmp[i] - r[j] * tmp[j - 1 - i]
        for i in range(j + 1):
            tmp[i] = phi[i]
    return phi
