"""
Wavelet shrinkage
=================

Pad to 128 points by reflection, run the Mallat pyramid with the D4 filter,
soft-threshold every detail level at the universal threshold and invert.
What the smooth leaves behind is the residual the detector thresholds.
"""

import numpy as np

from spikedetect import simlab, wavelet

# the hand-sized example first
dec = wavelet.dwt([4.0, 2.0, 5.0, 5.0], "haar")
print("haar [4,2,5,5]: details", [np.round(d, 4).tolist() for d in dec.detail], "approx", dec.approx)

rng = np.random.default_rng(3)
gen = simlab.load_generators()["stockton"]
y = simlab.simulate_series(gen, 96, rng).values.copy()
y[[12, 70]] += 0.5 * y.mean()

dec = wavelet.dwt(y)
lam = wavelet.universal_threshold(dec)
print(f"levels {dec.levels}, padded length {dec.padded_length}, universal threshold {lam:.3f}")
for j, d in enumerate(dec.detail):
    kept = np.count_nonzero(wavelet.soft(d, lam))
    print(f"  level {j}: {d.size:>3} coefficients, {kept:>3} survive")

smooth = wavelet.idwt(wavelet.soft_threshold(dec, lam)).values
print("residual SD:", round(float(np.std(y - smooth, ddof=1)), 3))
print("flagged:", wavelet.detect_spikes_wavelet(y).spikes.indices)
