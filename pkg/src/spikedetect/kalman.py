"""State-space form of ARIMA models, Kalman filter/smoother and auxiliary-residual spike detection.

Recursions (time-invariant system matrices)::

    v_t     = y_t - Z a_t
    F_t     = Z P_t Z' + H
    K_t     = T P_t Z' / F_t
    a_t|t   = a_t + P_t Z' v_t / F_t
    a_t+1   = T a_t|t
    P_t|t   = P_t - P_t Z' Z P_t / F_t
    P_t+1   = T P_t (T - K_t Z)' + R Q R'

Smoother, with L_t = T - K_t Z and r_n = 0, N_n = 0::

    r_t-1   = Z' v_t / F_t + L_t' r_t
    N_t-1   = Z' Z / F_t + L_t' N_t L_t
    alpha_t = a_t + P_t r_t-1
    V_t     = P_t - P_t N_t-1 P_t
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import _kernels
from .arima import ArimaModel, FitReport, select_order
from .core import InputError, Method, as_series, threshold_result, DetectionResult


class FilterDegeneracyError(ArithmeticError):
    pass


@dataclass(frozen=True)
class StateSpaceModel:
    T: np.ndarray
    Z: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    H: float
    a1: np.ndarray
    P1: np.ndarray
    offset: float = 0.0  # constant added to Z a_t (the ARMA mean)

    def __post_init__(self):
        T = np.atleast_2d(np.asarray(self.T, dtype=float))
        m = T.shape[0]
        Z = np.asarray(self.Z, dtype=float).reshape(m)
        R = np.asarray(self.R, dtype=float).reshape(m, -1)
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        a1 = np.asarray(self.a1, dtype=float).reshape(m)
        P1 = np.atleast_2d(np.asarray(self.P1, dtype=float)).reshape(m, m)
        if T.shape != (m, m) or Q.shape != (R.shape[1], R.shape[1]):
            raise InputError("inconsistent system matrix dimensions")
        if self.H < 0:
            raise InputError("observation variance H must be >= 0")
        for name, val in (("T", T), ("Z", Z), ("R", R), ("Q", Q), ("a1", a1), ("P1", P1)):
            object.__setattr__(self, name, np.ascontiguousarray(val))
        object.__setattr__(self, "H", float(self.H))

    @property
    def m(self) -> int:
        return self.T.shape[0]

    @property
    def RQR(self) -> np.ndarray:
        return np.ascontiguousarray(self.R @ self.Q @ self.R.T)

    def with_H(self, H: float) -> "StateSpaceModel":
        return StateSpaceModel(self.T, self.Z, self.R, self.Q, H, self.a1, self.P1, self.offset)


@dataclass(frozen=True)
class FilterOutput:
    a: np.ndarray
    P: np.ndarray
    v: np.ndarray
    F: np.ndarray
    K: np.ndarray
    loglik: float
    skipped: np.ndarray
    Z: np.ndarray

    @property
    def a_filtered(self) -> np.ndarray:
        """Filtered means ``a_t|t``."""
        PZ = self.P @ self.Z
        gain = np.where(self.skipped, 0.0, self.v / np.where(self.skipped, 1.0, self.F))
        return self.a + PZ * gain[:, None]

    @property
    def P_filtered(self) -> np.ndarray:
        PZ = self.P @ self.Z
        F = np.where(self.skipped, np.inf, self.F)
        return self.P - PZ[:, :, None] * PZ[:, None, :] / F[:, None, None]

    @property
    def standardized_innovations(self) -> np.ndarray:
        return np.where(self.skipped, 0.0, self.v / np.sqrt(np.where(self.skipped, 1.0, self.F)))


@dataclass(frozen=True)
class SmootherOutput:
    """Smoothed states and disturbances.

    ``r[t]`` and ``N[t]`` hold the accumulators used for time ``t``'s smoothed
    state (``r_{t-1}`` and ``N_{t-1}`` in the backward-recursion indexing).
    ``u`` and ``D`` are the smoothing errors and their variances, so that
    ``eps_hat = H u`` and ``Var(eps_hat) = H^2 D``.
    """

    alpha_hat: np.ndarray
    V: np.ndarray
    r: np.ndarray
    N: np.ndarray
    eps_hat: np.ndarray
    eps_var: np.ndarray
    eta_hat: np.ndarray
    u: np.ndarray
    D: np.ndarray

    @property
    def auxiliary_residuals(self) -> np.ndarray:
        """Standardised smoothed observation disturbances ``u_t / sqrt(D_t)``."""
        ok = self.D > 0
        out = np.zeros_like(self.u)
        out[ok] = self.u[ok] / np.sqrt(self.D[ok])
        return out


def _arma_block(model: ArimaModel):
    T, R = _kernels.arma_system(model.phi, model.theta)
    P = _kernels.lyapunov(T, np.outer(R, R) * model.sigma2)
    return T, R, P


def to_state_space(model: ArimaModel, obs_noise: float = 0.0, diffuse_var: float = 1e7) -> StateSpaceModel:
    """ARIMA(p, d, q) in companion form with ``m = max(p, q+1) + d`` states.

    For ``d > 0`` the leading ``d`` states carry ``y_{t-1}, ..., y_{t-d}`` and
    get a large finite initial variance ``diffuse_var``.
    """
    model.validate()
    T_s, R_s, P_s = _arma_block(model)
    ms = T_s.shape[0]
    d = model.d
    m = ms + d
    # y_t = sum_k c_k y_{t-k} + w_t  from (1 - B)^d
    c = np.array([(-1.0) ** (k + 1) * math.comb(d, k) for k in range(1, d + 1)])
    Z = np.zeros(m)
    Z[:d] = c
    Z[d] = 1.0
    T = np.zeros((m, m))
    if d:
        T[0, :d] = c
        T[0, d] = 1.0
        for i in range(1, d):
            T[i, i - 1] = 1.0
    T[d:, d:] = T_s
    R = np.zeros((m, 1))
    R[d:, 0] = R_s
    P1 = np.zeros((m, m))
    P1[:d, :d] = np.eye(d) * diffuse_var
    P1[d:, d:] = P_s
    return StateSpaceModel(T, Z, R, np.array([[model.sigma2]]), obs_noise, np.zeros(m), P1, model.mean if d == 0 else 0.0)


def filter(ssm: StateSpaceModel, series, floor: float | None = None) -> FilterOutput:
    y = np.ascontiguousarray(as_series(series).values - ssm.offset)
    if floor is None:
        scale = max(float(np.max(np.abs(np.diag(ssm.P1)), initial=0.0)), ssm.H, float(np.max(np.abs(np.diag(ssm.RQR)), initial=0.0)))
        floor = 1e-12 * scale if scale > 0 else 0.0
    a, P, v, F, K, skip, ll, status = _kernels.kalman_filter(y, ssm.T, ssm.Z, ssm.RQR, ssm.H, ssm.a1, ssm.P1, floor)
    if status != _kernels.OK:
        raise FilterDegeneracyError("innovation variance fell below the numerical floor")
    return FilterOutput(a, P, v, F, K, ll, skip, ssm.Z)


def smooth(ssm: StateSpaceModel, fo: FilterOutput) -> SmootherOutput:
    if fo.a.shape[1] != ssm.m:
        raise InputError("filter output does not match the state dimension")
    alpha, V, r, N, u, D = _kernels.kalman_smoother(ssm.T, ssm.Z, fo.a, fo.P, fo.v, fo.F, fo.K, fo.skipped)
    # eta_hat_t = Q R' r_t (the accumulator from t+1 onwards)
    r_next = np.vstack([r[1:], np.zeros((1, ssm.m))])
    eta = r_next @ ssm.R @ ssm.Q.T
    return SmootherOutput(alpha, V, r, N, ssm.H * u, ssm.H ** 2 * D, eta, u, D)


def estimate_obs_noise(model: ArimaModel, series, lower_frac: float = 1e-6) -> float:
    """Maximise the state-space likelihood over H with the ARIMA part held fixed."""
    y = as_series(series).values
    var = float(np.var(y, ddof=1)) if y.size > 1 else 1.0
    if not var > 0:
        var = 1.0
    base = to_state_space(model, 0.0, diffuse_var=1e7 * var)
    lo, hi = math.log(lower_frac * var), math.log(var)

    def negll(logh):
        try:
            return -filter(base.with_H(math.exp(logh)), y).loglik
        except FilterDegeneracyError:
            return np.inf

    res = optimize.minimize_scalar(negll, bounds=(lo, hi), method="bounded", options={"xatol": 1e-4})
    best = res.x
    if negll(lo) <= res.fun:
        best = lo
    return math.exp(best)


def detect_spikes_kalman(series, k_sd: float = 2.0, fit_report: FitReport | None = None, residual: str = "auxiliary") -> DetectionResult:
    """Kalman filter/smoother spike detection.

    The AIC-selected ARIMA model is cast in state-space form with an
    observation-noise variance chosen by maximum likelihood. Residuals are the
    standardised smoothed observation disturbances (``residual="auxiliary"``)
    or the standardised one-step innovations (``residual="innovation"``).
    """
    ts = as_series(series)
    y = ts.values
    if fit_report is None:
        fit_report = select_order(ts)
    model = fit_report.model
    H = estimate_obs_noise(model, y)
    var = float(np.var(y, ddof=1)) if y.size > 1 else 1.0
    ssm = to_state_space(model, H, diffuse_var=1e7 * (var if var > 0 else 1.0))
    fo = filter(ssm, y)
    so = smooth(ssm, fo)
    fitted = so.alpha_hat @ ssm.Z + ssm.offset
    if residual == "auxiliary":
        resid = so.auxiliary_residuals
    elif residual == "innovation":
        resid = fo.standardized_innovations
    else:
        raise InputError(f"unknown residual type {residual!r}")
    # the leading d points only initialise the diffuse states
    resid = resid.copy()
    resid[: model.d] = 0.0
    return threshold_result(Method.KALMAN, resid, fitted, k_sd, model=model, H=H)
