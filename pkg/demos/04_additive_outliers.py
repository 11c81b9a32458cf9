"""
Iterative additive-outlier search
=================================

For each time point the outlier statistic compares the residual with what an
additive outlier would leave behind through the pi-weights of the model.
The largest exceedance is removed, the scale is recomputed, and once a pass
finds nothing more the model is re-estimated with the outliers treated as
known.
"""

import numpy as np

from spikedetect import ao_detect, arima, simlab

model = arima.ArimaModel.arma(ar=(0.5,))
pi = ao_detect.pi_weights(model, 8)
print("pi-weights of AR(1) 0.5:", pi)
print("pi-weights of MA(1) 0.5:", ao_detect.pi_weights(arima.ArimaModel.arma(ma=(0.5,)), 6))

rng = np.random.default_rng(11)
gen = simlab.load_generators()["sacramento"]
y = simlab.simulate_series(gen, 96, rng).values.copy()
y[[25, 26, 80]] += 0.5 * y.mean()

res = ao_detect.detect_spikes_ao(y, critical_value=3.0)
print("outliers (index: size):", {t: round(float(w), 2) for t, w in sorted(res.info["outliers"].items())})
print("reported spikes (positive only):", res.spikes.indices)
print("passes:", res.info["passes"], " re-estimated model:", res.info["model"])
