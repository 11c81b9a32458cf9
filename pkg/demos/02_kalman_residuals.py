"""
Inside the Kalman detector
==========================

The ARIMA model alone reproduces the data exactly, so the state-space
detector adds an observation-noise variance H, chosen by maximum likelihood
with the ARMA part held fixed, and looks at the standardised smoothed
observation disturbances (auxiliary residuals).
"""

import numpy as np

from spikedetect import arima, kalman, simlab

rng = np.random.default_rng(7)
gen = simlab.load_generators()["san_diego"]
y = simlab.simulate_series(gen, 96, rng).values.copy()
y[40] += 0.5 * y.mean()

fit = arima.select_order(y)
print("selected:", fit.model, " AIC", round(fit.aic, 2))

H = kalman.estimate_obs_noise(fit.model, y)
print(f"H = {H:.4g}  ({H / np.var(y, ddof=1):.2%} of the series variance)")

ssm = kalman.to_state_space(fit.model, H)
print("state dimension:", ssm.m)
print("stationary initial covariance P1:\n", np.round(ssm.P1, 3))

fo = kalman.filter(ssm, y)
so = kalman.smooth(ssm, fo)
print("log-likelihood:", round(fo.loglik, 3))

aux = so.auxiliary_residuals
top = np.argsort(aux)[::-1][:5]
print("largest auxiliary residuals:", [(int(t), round(float(aux[t]), 2)) for t in top])

# smoothing never increases uncertainty
print("min eigenvalue of P_t - V_t:", min(np.linalg.eigvalsh(fo.P[t] - so.V[t]).min() for t in range(96)))

res = kalman.detect_spikes_kalman(y, fit_report=fit)
print("flagged:", res.spikes.indices, " cutoff", round(res.threshold_value, 3))
