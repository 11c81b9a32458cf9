"""
Four ways to find a spike
=========================

Simulate three years of a monthly rate series that behaves like the
Los Angeles generator, push a few months up by half the series mean, and
ask each detector which months look like spikes.
"""

import numpy as np

from spikedetect import arima, simlab
from spikedetect.cli import run_detectors, spike_months
from spikedetect.core import TimeSeries, YearMonth, score, sensitivity, specificity

rng = np.random.default_rng(2005)
gen = simlab.load_generators()["los_angeles"]
print("generator:", gen.model)

# a clean series, then three spikes of +50% of its own mean
clean = simlab.simulate_series(gen, 96, rng)
spiked, truth = simlab.insert_spikes(clean, 3, 0.5, rng)
series = TimeSeries(spiked.values, origin=YearMonth(2005, 1))
print("inserted at:", [series.label(i) for i in truth])

# one AIC model selection is shared by the three model-based detectors
results = run_detectors(series, ["arima", "kalman", "wavelet", "ao"])
for method, res in results.items():
    c = score(truth, res.spikes, len(series))
    print(f"{method:>8}: {', '.join(spike_months(series, res)) or '-':<40}"
          f" sensitivity {sensitivity(c):.2f}  specificity {specificity(c):.3f}")

# the model the detectors agreed on
print("selected model:", results["arima"].info["model"])
