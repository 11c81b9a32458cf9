"""Iterative additive-outlier detection on ARIMA residuals.

For an additive outlier of size w at time T the residuals of an ARIMA model
pick up the pattern ``w * pi(B)``: ``+w`` at T and ``-w * pi_i`` at ``T + i``,
where ``pi(B) = phi(B) (1 - B)^d / theta(B) = 1 - sum_i pi_i B^i``. The least
squares estimate of w from that pattern and its likelihood-ratio statistic are

    rho_t^2 = 1 / (1 + sum_{i=1}^{n-t} pi_i^2)
    w_t     = rho_t^2 * (e_t - sum_{i=1}^{n-t} pi_i e_{t+i})
    lambda_t = w_t / (rho_t * sigma)

The rendering of these formulas in some references flips the sign inside
rho_t^2 and drops the lead on e_{t+i}; the forms above are the ones that
recover w exactly from a noise-free outlier pattern.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .arima import (
    ArimaModel, ConvergenceError, DegenerateVarianceError, FitReport, ModelError,
    fit, one_step_residuals, select_order,
)
from .core import DetectionResult, InputError, Method, SpikeSet, as_series, robust_scale

log = logging.getLogger(__name__)


def pi_weights(model: ArimaModel, n: int) -> np.ndarray:
    """Return ``pi_1 .. pi_{n-1}`` of the pure-AR form of ``model``."""
    if n < 1:
        raise InputError("n must be >= 1")
    model.validate()
    # phi(B) (1 - B)^d as coefficients of B^0, B^1, ...
    a = np.r_[1.0, -model.phi]
    for _ in range(model.d):
        a = np.convolve(a, [1.0, -1.0])
    theta = model.theta
    c = np.zeros(n)
    c[0] = 1.0
    for j in range(1, n):
        s = a[j] if j < a.size else 0.0
        for i in range(1, min(j, theta.size) + 1):
            s += theta[i - 1] * c[j - i]
        c[j] = s
    return -c[1:]


@dataclass
class AoState:
    model: ArimaModel
    pi_weights: np.ndarray
    residuals: np.ndarray
    sigma_hat: float
    known_outliers: dict = field(default_factory=dict)

    @property
    def spikes(self) -> SpikeSet:
        return SpikeSet(tuple(self.known_outliers))


def _tail_sums(pi: np.ndarray, e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = e.size
    sq = np.r_[0.0, np.cumsum(pi ** 2)]
    cross = np.empty(n)
    for t in range(n):
        k = n - 1 - t
        cross[t] = pi[:k] @ e[t + 1:] if k else 0.0
    return sq[n - 1 - np.arange(n)], cross


def ao_terms(pi: np.ndarray, residuals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Outlier size estimates ``w_t`` and ``rho_t^2`` for every time point."""
    e = np.asarray(residuals, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if pi.size < e.size - 1:
        raise InputError("need at least n-1 pi-weights")
    sq, cross = _tail_sums(pi, e)
    rho2 = 1.0 / (1.0 + sq)
    omega = rho2 * (e - cross)
    return omega, rho2


def ao_statistics(state: AoState) -> np.ndarray:
    omega, rho2 = ao_terms(state.pi_weights, state.residuals)
    return omega / (np.sqrt(rho2) * state.sigma_hat)


def remove_outlier(residuals: np.ndarray, pi: np.ndarray, T: int, omega: float) -> np.ndarray:
    """Subtract ``omega * pi(B) I(t = T)`` from the residuals at ``t >= T``."""
    e = np.array(residuals, dtype=float)
    k = e.size - 1 - T
    e[T] -= omega
    e[T + 1:] += omega * pi[:k]
    return e


def _scale(e: np.ndarray, robust: bool, mask=None) -> float:
    """Residual scale over the points not already declared outliers."""
    if mask is not None and np.count_nonzero(~mask) >= 3:
        e = e[~mask]
    s = robust_scale(e) if robust else float(np.std(e))
    if not s > 1e-12 * (1.0 + float(np.max(np.abs(e)))) and robust:
        s = float(np.std(e))
    return s


def search_outliers(residuals, pi, critical_value: float, robust: bool = True, exclude=(), max_count: int | None = None):
    """Sequential search with residual adjustment (one pass, fixed model).

    Returns the found ``{index: (omega, lambda)}`` in detection order and the
    adjusted residuals.
    """
    e = np.array(residuals, dtype=float)
    n = e.size
    blocked = np.zeros(n, dtype=bool)
    blocked[list(exclude)] = True
    found = {}
    cap = n if max_count is None else max_count
    while len(found) < cap:
        sigma = _scale(e, robust, blocked)
        if not sigma > 1e-12 * (1.0 + float(np.max(np.abs(e)))):
            break
        omega, rho2 = ao_terms(pi, e)
        lam = omega / (np.sqrt(rho2) * sigma)
        lam[blocked] = 0.0
        T = int(np.argmax(np.abs(lam)))
        if not abs(lam[T]) > critical_value:
            break
        found[T] = (float(omega[T]), float(lam[T]))
        blocked[T] = True
        e = remove_outlier(e, pi, T, omega[T])
    return found, e


def _outlier_patterns(pi: np.ndarray, times, n: int) -> np.ndarray:
    X = np.zeros((n, len(times)))
    for j, T in enumerate(times):
        X[T, j] = 1.0
        X[T + 1:, j] = -pi[: n - 1 - T]
    return X


def reestimate(y: np.ndarray, model: ArimaModel, times, include_mean: bool, rounds: int = 3):
    """Jointly estimate outlier sizes and ARIMA parameters for known outlier times.

    Alternates least squares of the residuals on the pi-filtered outlier
    indicators with an ARIMA refit of the outlier-corrected series.
    """
    n = y.size
    times = sorted(times)

    def sizes(model):
        resid, _ = one_step_residuals(model, y)
        X = _outlier_patterns(pi_weights(model, n), times, n)
        return np.linalg.lstsq(X, resid * math.sqrt(model.sigma2), rcond=None)[0]

    for _ in range(rounds):
        omegas = sizes(model)
        adj = y.copy()
        adj[times] -= omegas
        p, d, q = model.order
        try:
            model = fit(adj, p, d, q, include_mean=include_mean).model
        except ConvergenceError as exc:
            model = exc.best.model
    # sizes consistent with the model that is returned
    return model, dict(zip(times, sizes(model)))


def detect_spikes_ao(
    series,
    critical_value: float = 3.0,
    fit_report: FitReport | None = None,
    robust: bool = True,
    max_outer: int = 10,
) -> DetectionResult:
    """Iterative additive-outlier detection; only positive outliers are reported.

    ``info["outer_iterations"]`` counts the detection passes that found new
    outliers; ``info["passes"]`` includes the final pass that confirmed there
    were none left.
    """
    ts = as_series(series)
    y = np.array(ts.values, dtype=float)
    n = y.size
    if fit_report is None:
        fit_report = select_order(ts)
    model = fit_report.model
    include_mean = fit_report.include_mean
    cap = max(1, n // 5)
    known: dict[int, float] = {}
    stats: dict[int, float] = {}
    truncated = False
    outer = 0
    rounds = 0  # passes that added outliers
    final_e = None
    for outer in range(1, max_outer + 1):
        adj = y.copy()
        for T, w in known.items():
            adj[T] -= w
        resid, _ = one_step_residuals(model, adj)
        e = resid * math.sqrt(model.sigma2)
        pi = pi_weights(model, n)
        found, final_e = search_outliers(e, pi, critical_value, robust, exclude=known, max_count=cap - len(known))
        if not found:
            break
        rounds += 1
        for T, (w, lam) in found.items():
            known[T] = w
            stats[T] = lam
        if len(known) >= cap:
            truncated = True
            log.warning("additive-outlier search hit the cap of %d outliers", cap)
            break
        try:
            model, known = reestimate(y, model, known, include_mean)
        except (DegenerateVarianceError, ModelError, np.linalg.LinAlgError):
            # nothing left to model once the outliers are removed
            break
    else:
        truncated = True
        log.warning("additive-outlier search stopped after %d outer iterations", max_outer)

    mask = np.zeros(n, dtype=bool)
    mask[list(known)] = True
    sigma = _scale(final_e, robust, mask)
    omega, rho2 = ao_terms(pi, final_e)
    lam = omega / (np.sqrt(rho2) * sigma) if sigma > 0 else np.zeros(n)
    for T, v in stats.items():
        lam[T] = v
    spikes = SpikeSet(tuple(T for T, w in known.items() if w > 0))
    adj = y.copy()
    for T, w in known.items():
        adj[T] -= w
    return DetectionResult(
        Method.AO,
        spikes,
        adj,
        lam,
        float(critical_value),
        {"model": model, "outliers": dict(known), "outer_iterations": rounds, "passes": outer, "truncated": truncated},
    )
