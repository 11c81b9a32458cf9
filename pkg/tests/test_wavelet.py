import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikedetect import wavelet
from spikedetect.core import InputError
from spikedetect.simlab import insert_spikes, load_generators, simulate_series

R2 = math.sqrt(2.0)


def test_haar_constant():
    dec = wavelet.dwt([1.0, 1.0, 1.0, 1.0], "haar")
    assert dec.levels == 2
    for d in dec.detail:
        np.testing.assert_allclose(d, 0.0, atol=1e-15)
    assert dec.approx[0] == pytest.approx(2.0)


def test_haar_hand_pyramid():
    dec = wavelet.dwt([4.0, 2.0, 5.0, 5.0], "haar")
    np.testing.assert_allclose(dec.detail[1], [R2, 0.0], atol=1e-14)
    np.testing.assert_allclose(dec.detail[0], [-2.0], atol=1e-14)
    assert dec.approx[0] == pytest.approx(8.0)
    zeroed = wavelet.WaveletDecomposition("haar", 2, (np.zeros(1), dec.detail[1]), dec.approx, 4)
    np.testing.assert_allclose(wavelet.idwt(zeroed).values, [5.0, 3.0, 4.0, 4.0], atol=1e-14)


def test_daub4_filter_is_orthonormal():
    h, g = wavelet._filters("daub4")
    assert h @ h == pytest.approx(1.0)
    assert h.sum() == pytest.approx(R2)
    assert h[:2] @ h[2:] == pytest.approx(0.0, abs=1e-15)
    assert g @ h == pytest.approx(0.0, abs=1e-15)
    # two vanishing moments
    k = np.arange(4)
    assert g.sum() == pytest.approx(0.0, abs=1e-15)
    assert (k * g).sum() == pytest.approx(0.0, abs=1e-14)


def test_reflect_pad():
    np.testing.assert_array_equal(wavelet.reflect_pad(np.array([1.0, 2.0, 3.0])), [1, 2, 3, 3])
    assert wavelet.reflect_pad(np.arange(96.0)).size == 128
    assert wavelet.reflect_pad(np.arange(8.0)).size == 8


@pytest.mark.parametrize("filt", ["haar", "daub4"])
def test_perfect_reconstruction_and_energy(filt):
    rng = np.random.default_rng(0)
    for n in (8, 33, 96, 128):
        for _ in range(250):
            x = rng.normal(size=n) * rng.uniform(0.1, 100)
            dec = wavelet.dwt(x, filt)
            assert dec.coefficients().size == dec.padded_length
            np.testing.assert_allclose(wavelet.idwt(dec).values, x, atol=1e-10)
            padded = wavelet.reflect_pad(x)
            e = np.sum(dec.coefficients() ** 2)
            assert abs(e - padded @ padded) <= 1e-10 * (padded @ padded)


def test_errors():
    with pytest.raises(InputError):
        wavelet.dwt([1.0])
    with pytest.raises(InputError):
        wavelet.dwt([1.0, 2.0], "sym8")
    dec = wavelet.dwt(np.arange(8.0))
    with pytest.raises(InputError):
        wavelet.soft_threshold(dec, -1.0)
    bad = wavelet.WaveletDecomposition("haar", 3, dec.detail[:2], dec.approx, 8)
    with pytest.raises(InputError):
        wavelet.idwt(bad)


def test_soft_threshold_definition():
    np.testing.assert_allclose(wavelet.soft(np.array([3.0, -0.5, -4.0]), 1.0), [2.0, 0.0, -3.0])
    dec = wavelet.dwt(np.random.default_rng(1).normal(size=32))
    same = wavelet.soft_threshold(dec, 0.0)
    for a, b in zip(dec.detail, same.detail):
        np.testing.assert_array_equal(a, b)
    smooth = wavelet.soft_threshold(dec, 1e300)
    assert all(np.all(d == 0) for d in smooth.detail)
    np.testing.assert_array_equal(smooth.approx, dec.approx)
    # only the scaling coefficient is left: the reconstruction is the padded mean
    x = wavelet.idwt(smooth).values
    np.testing.assert_allclose(x, x[0])


def test_zero_coefficients():
    dec = wavelet.dwt(np.random.default_rng(2).normal(size=16))
    z = wavelet.WaveletDecomposition(dec.filter_name, dec.levels, tuple(np.zeros_like(d) for d in dec.detail), np.zeros(1), 16)
    np.testing.assert_array_equal(wavelet.idwt(z).values, 0.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), l1=st.floats(0, 5), l2=st.floats(0, 5))
def test_residual_energy_monotone_in_threshold(seed, l1, l2):
    lo, hi = sorted((l1, l2))
    x = np.random.default_rng(seed).normal(size=50)
    dec = wavelet.dwt(x)
    r_lo = x - wavelet.idwt(wavelet.soft_threshold(dec, lo)).values
    r_hi = x - wavelet.idwt(wavelet.soft_threshold(dec, hi)).values
    # on the padded signal this is exact; the unpadded part can only lose a sliver
    assert r_hi @ r_hi >= r_lo @ r_lo - 1e-9 or np.isclose(lo, hi)


def test_haar_one_level_entrywise_monotone():
    x = np.random.default_rng(3).normal(size=2)
    prev = np.zeros(2)
    for lam in np.linspace(0, 3, 31):
        dec = wavelet.dwt(x, "haar")
        r = np.abs(x - wavelet.idwt(wavelet.soft_threshold(dec, lam)).values)
        assert np.all(r >= prev - 1e-12)
        prev = r


def test_constant_series_has_no_spikes():
    for n in (8, 33, 96, 128):
        assert len(wavelet.detect_spikes_wavelet(np.full(n, 7.5)).spikes) == 0


def test_constant_plus_impulse():
    y = np.full(96, 20.0)
    y[10] = 30.0
    assert 10 in wavelet.detect_spikes_wavelet(y).spikes


def test_short_series_rejected():
    with pytest.raises(InputError):
        wavelet.detect_spikes_wavelet(np.arange(7.0))


def test_universal_threshold_formula():
    dec = wavelet.dwt(np.random.default_rng(4).normal(size=96))
    sigma = np.median(np.abs(dec.detail[-1])) / 0.6745
    assert wavelet.universal_threshold(dec) == pytest.approx(sigma * math.sqrt(2 * math.log(128)))


def test_gaussian_noise_specificity():
    rng = np.random.default_rng(5)
    spec = [1 - len(wavelet.detect_spikes_wavelet(rng.normal(size=96)).spikes) / 96 for _ in range(200)]
    assert np.mean(spec) >= 0.95


def test_san_diego_sensitivity_band():
    gen = load_generators()["san_diego"]
    rng = np.random.default_rng(6)
    sens = []
    for r in range(200):
        k = 1 + r % 10
        y, truth = insert_spikes(simulate_series(gen, 96, rng), k, 0.5, rng)
        sens.append(len(set(wavelet.detect_spikes_wavelet(y).spikes) & set(truth)) / k)
    assert abs(100 * np.mean(sens) - 89.50) <= 6
