"""ARIMA models: simulation, exact likelihood, ML fitting and stepwise order selection.

Coefficients follow the convention

    phi(B) (1 - B)^d (y_t - mu) = theta(B) e_t,
    phi(B) = 1 - phi_1 B - ... - phi_p B^p,
    theta(B) = 1 - theta_1 B - ... - theta_q B^q,

so a printed model ``y_t = e_t - 0.95 e_{t-1}`` has ``theta_1 = 0.95``.
The mean ``mu`` applies to the d-times differenced series and is only
estimated when ``d == 0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, signal

from . import _kernels
from .core import InputError, Method, TimeSeries, as_series, threshold_result, DetectionResult

log = logging.getLogger(__name__)

LOG2PI = math.log(2.0 * math.pi)


class ModelError(ValueError):
    """Model violates stationarity, invertibility or variance constraints."""


class DegenerateVarianceError(ArithmeticError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class SelectionError(RuntimeError):
    def __init__(self, msg, failures=()):
        super().__init__(msg)
        self.failures = list(failures)


def _roots_outside(coef) -> bool:
    """True if ``1 - c_1 z - ... - c_k z^k`` has all roots outside the unit circle.

    Uses the step-down (Schur-Cohn) recursion: the polynomial is stable iff
    every reflection coefficient has modulus below one.
    """
    c = np.array(coef, dtype=float)
    for j in range(c.size - 1, -1, -1):
        r = c[j]
        if not abs(r) < 1.0:
            return False
        c = (c[:j] + r * c[:j][::-1]) / (1.0 - r * r)
    return True


@dataclass(frozen=True)
class ArimaModel:
    p: int = 0
    d: int = 0
    q: int = 0
    ar: tuple = ()
    ma: tuple = ()
    mean: float = 0.0
    sigma2: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "ar", tuple(float(x) for x in self.ar))
        object.__setattr__(self, "ma", tuple(float(x) for x in self.ma))
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if min(self.p, self.d, self.q) < 0:
            raise ModelError("orders must be non-negative")
        if len(self.ar) != self.p or len(self.ma) != self.q:
            raise ModelError(f"coefficient counts {len(self.ar)},{len(self.ma)} do not match orders p={self.p}, q={self.q}")

    @classmethod
    def arma(cls, ar=(), ma=(), mean=0.0, sigma2=1.0, d=0) -> "ArimaModel":
        return cls(len(ar), d, len(ma), tuple(ar), tuple(ma), mean, sigma2)

    @property
    def order(self) -> tuple[int, int, int]:
        return self.p, self.d, self.q

    @property
    def phi(self) -> np.ndarray:
        return np.array(self.ar, dtype=float)

    @property
    def theta(self) -> np.ndarray:
        return np.array(self.ma, dtype=float)

    def validate(self) -> "ArimaModel":
        if not self.sigma2 > 0 or not math.isfinite(self.sigma2):
            raise ModelError(f"innovation variance must be positive, got {self.sigma2}")
        if not _roots_outside(self.ar):
            raise ModelError(f"AR polynomial {self.ar} is not stationary")
        if not _roots_outside(self.ma):
            raise ModelError(f"MA polynomial {self.ma} is not invertible")
        return self

    def stationary_variance(self) -> float:
        """Variance of the d-times differenced process (``gamma_0``)."""
        T, R = _kernels.arma_system(self.phi, self.theta)
        P = _kernels.lyapunov(T, np.outer(R, R) * self.sigma2)
        return float(P[0, 0])

    def __str__(self):
        return f"ARIMA({self.p},{self.d},{self.q}) ar={self.ar} ma={self.ma} mean={self.mean:.4g} sigma2={self.sigma2:.4g}"


@dataclass(frozen=True)
class FitReport:
    model: ArimaModel
    loglik: float
    aic: float
    n_effective: int
    include_mean: bool = True
    info: dict = field(default_factory=dict, compare=False)

    @property
    def n_params(self) -> int:
        m = self.model
        return m.p + m.q + int(self.include_mean) + 1


def difference(y, d: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return np.diff(y, n=d) if d else y.copy()


def simulate(model: ArimaModel, n: int, rng: np.random.Generator, start: float = 0.0, burn_in: int | None = None) -> TimeSeries:
    """Draw ``n`` observations with Gaussian innovations.

    The stationary part is run through a burn-in of ``max(200, 10 (p+q+1))``
    draws. For ``d > 0`` the stationary draws are summed ``d`` times and
    shifted by ``start``.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    model.validate()
    if burn_in is None:
        burn_in = max(200, 10 * (model.p + model.q + 1))
    e = rng.standard_normal(burn_in + n) * math.sqrt(model.sigma2)
    w = signal.lfilter(np.r_[1.0, -model.theta], np.r_[1.0, -model.phi], e)[burn_in:] + model.mean
    y = w
    for _ in range(model.d):
        y = np.cumsum(y)
    if model.d:
        y = y + start
    return TimeSeries(y)


def _arma_loglik(w: np.ndarray, phi, theta, sigma2: float) -> float:
    slf, ssq = _kernels.arma_concentrated(w, phi, theta)
    if not math.isfinite(slf):
        raise ModelError("Kalman filter degenerate for this model")
    n = w.size
    return -0.5 * (n * LOG2PI + n * math.log(sigma2) + slf + ssq / sigma2)


def loglikelihood(model: ArimaModel, series) -> float:
    """Exact Gaussian log-likelihood of the differenced, mean-subtracted series."""
    model.validate()
    y = as_series(series).values
    w = difference(y, model.d) - model.mean
    if w.size <= model.p + model.q or w.size == 0:
        raise InputError(f"effective sample {w.size} too short for p+q={model.p + model.q}")
    return _arma_loglik(np.ascontiguousarray(w), model.phi, model.theta, model.sigma2)


def coef_to_pacf(coef) -> np.ndarray:
    """Inverse of the partial-autocorrelation reparameterisation."""
    c = np.array(coef, dtype=float)
    k = c.size
    u = np.zeros(k)
    for j in range(k - 1, -1, -1):
        r = c[j]
        if abs(r) >= 1:
            raise ModelError("coefficients outside the stationary region")
        u[j] = math.atanh(r)
        if j:
            prev = (c[:j] + r * c[:j][::-1]) / (1 - r * r)
            c = prev
    return u


PACF_BOUND = 5.0


def aic_of(loglik: float, p: int, q: int, include_mean: bool) -> float:
    return -2.0 * loglik + 2.0 * (p + q + int(include_mean) + 1)


def fit(series, p: int, d: int, q: int, include_mean: bool = True, maxiter: int = 500, restarts: int = 3, seed: int = 0) -> FitReport:
    """Exact maximum-likelihood fit of an ARIMA(p, d, q) model.

    The innovation variance is concentrated out of the likelihood, the AR and
    MA polynomials are optimised through their partial autocorrelations, and
    BFGS is restarted from jittered points if it fails to converge.
    """
    y = as_series(series).values
    w = np.ascontiguousarray(difference(y, d))
    include_mean = bool(include_mean) and d == 0
    n = w.size
    k = p + q + int(include_mean)
    if n <= k + 1:
        raise InputError(f"series too short ({n} effective points) for ARIMA({p},{d},{q})")
    loc = float(np.mean(w)) if include_mean else 0.0
    scale = float(np.std(w))
    if not scale > 1e-10 * (1.0 + abs(loc)):
        raise DegenerateVarianceError("series has (numerically) zero variance")

    def unpack(x):
        # |partial autocorrelation| <= tanh(PACF_BOUND) keeps roots off the unit circle
        u = np.clip(x, -PACF_BOUND, PACF_BOUND)
        phi = _kernels.pacf_to_coef(u[:p]) if p else np.zeros(0)
        theta = _kernels.pacf_to_coef(u[p:p + q]) if q else np.zeros(0)
        mu = loc + scale * x[p + q] if include_mean else 0.0
        return phi, theta, mu

    def negll(x):
        phi, theta, mu = unpack(x)
        slf, ssq = _kernels.arma_concentrated(w - mu, phi, theta)
        if not (math.isfinite(slf) and ssq > 0):
            return 1e300
        return 0.5 * (n * math.log(ssq / n) + slf)

    if k == 0:
        best_x = np.zeros(0)
        converged = True
        nit = 0
    else:
        rng = np.random.default_rng(seed)
        best = None
        converged = False
        starts = [np.zeros(k)] + [rng.normal(scale=0.3, size=k) for _ in range(restarts)]
        nit = 0
        for x0 in starts:
            res = optimize.minimize(negll, x0, method="BFGS", options={"maxiter": maxiter, "gtol": 1e-6, "xrtol": 1e-8})
            nit += res.nit
            if best is None or res.fun < best.fun:
                best = res
            # status 2 = precision loss at a flat optimum, accepted
            if res.status in (0, 2) and np.all(np.isfinite(res.x)):
                converged = True
                break
        best_x = best.x
    phi, theta, mu = unpack(best_x)
    slf, ssq = _kernels.arma_concentrated(w - mu, phi, theta)
    sigma2 = ssq / n
    if not sigma2 > 1e-12 * scale * scale:
        raise DegenerateVarianceError("fitted innovation variance collapsed to zero")
    model = ArimaModel(p, d, q, tuple(phi), tuple(theta), mu, sigma2)
    ll = -0.5 * (n * LOG2PI + n * math.log(sigma2) + slf + n)
    report = FitReport(model, ll, aic_of(ll, p, q, include_mean), n, include_mean, {"iterations": nit})
    if not converged:
        raise ConvergenceError(f"ARIMA({p},{d},{q}) did not converge in {maxiter} iterations", best=report)
    return report


def kpss_statistic(x, lags: int | None = None) -> float:
    """Level-stationarity KPSS statistic with a Bartlett long-run variance."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if lags is None:
        lags = int(math.floor(4.0 * (n / 100.0) ** 0.25))
    e = x - x.mean()
    s = np.cumsum(e)
    lrv = e @ e / n
    for j in range(1, min(lags, n - 1) + 1):
        lrv += 2.0 * (1.0 - j / (lags + 1.0)) * (e[j:] @ e[:-j]) / n
    if not lrv > 0:
        return 0.0
    return float(s @ s / (n * n * lrv))


KPSS_CRITICAL_5PCT = 0.463


def choose_d(series, max_d: int = 2, critical: float = KPSS_CRITICAL_5PCT) -> int:
    """Smallest number of differences for which KPSS does not reject stationarity."""
    y = as_series(series).values
    for d in range(max_d + 1):
        w = difference(y, d)
        if w.size < 3 or np.ptp(w) == 0 or kpss_statistic(w) < critical:
            return d
    return max_d


def select_order(series, max_p: int = 5, max_q: int = 5, max_d: int = 2, max_models: int = 94, d: int | None = None) -> FitReport:
    """Stepwise AIC search over (p, q) after choosing d by repeated KPSS tests."""
    y = as_series(series).values
    if y.size < 20:
        raise InputError("order selection needs at least 20 observations")
    if d is None:
        d = choose_d(y, max_d)
    allow_mean = d == 0
    tried: dict[tuple, FitReport | None] = {}
    failures = []

    def evaluate(p, q, mean):
        key = (p, q, mean)
        if key in tried:
            return tried[key]
        if p < 0 or q < 0 or p > max_p or q > max_q or len(tried) >= max_models:
            return None
        try:
            rep = fit(y, p, d, q, include_mean=mean)
        except (ConvergenceError,) as exc:
            rep = exc.best
            failures.append((key, repr(exc)))
        except (ModelError, DegenerateVarianceError, InputError, np.linalg.LinAlgError) as exc:
            rep = None
            failures.append((key, repr(exc)))
        tried[key] = rep
        return rep

    best = None
    for p, q in ((2, 2), (0, 0), (1, 0), (0, 1)):
        rep = evaluate(min(p, max_p), min(q, max_q), allow_mean)
        if rep is not None and (best is None or rep.aic < best.aic):
            best = rep
    if best is None:
        raise SelectionError("all initial ARIMA candidates failed", failures)

    improved = True
    while improved and len(tried) < max_models:
        improved = False
        p0, q0, m0 = best.model.p, best.model.q, best.include_mean
        neighbours = [(p0 + dp, q0 + dq, m0) for dp, dq in
                      ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, 1), (-1, 1), (1, -1))]
        if allow_mean:
            neighbours.append((p0, q0, not m0))
        for p, q, mean in neighbours:
            rep = evaluate(p, q, mean)
            if rep is not None and rep.aic < best.aic - 1e-9:
                best = rep
                improved = True
                break
    return replace(best, info=dict(best.info, d_selected=d, models_tried=len(tried), failures=failures))


def one_step_residuals(model: ArimaModel, series) -> tuple[np.ndarray, np.ndarray]:
    """Standardised one-step-ahead prediction errors and the matching fitted values.

    Residuals for the first ``d`` observations (lost to differencing) are zero.
    """
    y = as_series(series).values
    w = np.ascontiguousarray(difference(y, model.d) - model.mean)
    v, F, status = _kernels.arma_filter_unit(w, model.phi, model.theta)
    if status != _kernels.OK:
        raise ModelError("Kalman filter degenerate for this model")
    resid = np.zeros(y.size)
    resid[model.d:] = v / np.sqrt(F * model.sigma2)
    fitted = y.copy()
    fitted[model.d:] = y[model.d:] - v
    return resid, fitted


def detect_spikes_arima(series, k_sd: float = 2.0, fit_report: FitReport | None = None) -> DetectionResult:
    """Flag points whose standardised one-step residual exceeds ``k_sd`` residual SDs.

    Only upward deviations count. ``fit_report`` may carry a model already
    selected for this exact series.
    """
    ts = as_series(series)
    if fit_report is None:
        fit_report = select_order(ts)
    resid, fitted = one_step_residuals(fit_report.model, ts)
    return threshold_result(Method.ARIMA, resid, fitted, k_sd, model=fit_report.model)
