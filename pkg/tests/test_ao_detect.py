import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikedetect import ao_detect, arima
from spikedetect.ao_detect import AoState
from spikedetect.arima import ArimaModel, FitReport
from spikedetect.core import InputError
from spikedetect.simlab import load_generators, simulate_series

import oracles

GENERATORS = load_generators()


def test_pi_weights_ar1():
    pi = ao_detect.pi_weights(ArimaModel.arma(ar=(0.5,)), 6)
    np.testing.assert_allclose(pi, [0.5, 0, 0, 0, 0], atol=1e-15)


def test_pi_weights_ma1():
    pi = ao_detect.pi_weights(ArimaModel.arma(ma=(0.5,)), 5)
    np.testing.assert_allclose(pi, [-0.5, -0.25, -0.125, -0.0625], atol=1e-15)


def test_pi_weights_white_noise():
    np.testing.assert_array_equal(ao_detect.pi_weights(ArimaModel(), 10), 0.0)


@pytest.mark.parametrize("name", ["oakland", "sacramento", "fresno", "richmond", "berkeley", "san_diego"])
def test_pi_weights_against_series_expansion(name):
    m = GENERATORS[name].model
    np.testing.assert_allclose(ao_detect.pi_weights(m, 40), oracles.pi_weights_by_expansion(m.phi, m.theta, m.d, 40), atol=1e-12)


def test_pi_weights_rejects_non_invertible():
    with pytest.raises(arima.ModelError):
        ao_detect.pi_weights(ArimaModel(0, 0, 1, (), (1.5,)), 5)


def test_ao_analytic_oracle():
    pi = ao_detect.pi_weights(ArimaModel.arma(ar=(0.5,)), 50)
    for T, omega in ((20, 7.3), (0, -2.0), (49, 4.0)):
        e = oracles.ao_pattern_residuals(pi, 50, T, omega)
        w, rho2 = ao_detect.ao_terms(pi, e)
        assert w[T] == pytest.approx(omega, abs=1e-8)
        lam = ao_detect.ao_statistics(AoState(ArimaModel.arma(ar=(0.5,)), pi, e, 1.0))
        assert int(np.argmax(np.abs(lam))) == T


def test_last_point_and_white_noise_statistics():
    e = np.random.default_rng(0).normal(size=30)
    pi = ao_detect.pi_weights(ArimaModel.arma(ar=(0.6,)), 30)
    w, rho2 = ao_detect.ao_terms(pi, e)
    assert rho2[-1] == 1.0 and w[-1] == e[-1]
    assert np.all((rho2 > 0) & (rho2 <= 1))
    lam = ao_detect.ao_statistics(AoState(ArimaModel(), np.zeros(29), e, 2.0))
    np.testing.assert_allclose(lam, e / 2.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), c=st.floats(0.01, 100))
def test_lambda_scale_equivariant(seed, c):
    model = ArimaModel.arma(ar=(0.4,), ma=(0.3,), mean=10.0, sigma2=2.0)
    y = arima.simulate(model, 60, np.random.default_rng(seed)).values
    scaled = ArimaModel.arma(ar=(0.4,), ma=(0.3,), mean=10.0 * c, sigma2=2.0 * c * c)
    pi = ao_detect.pi_weights(model, 60)

    def lam(mod, series):
        r, _ = arima.one_step_residuals(mod, series)
        e = r * np.sqrt(mod.sigma2)
        return ao_detect.ao_statistics(AoState(mod, pi, e, ao_detect._scale(e, True)))

    np.testing.assert_allclose(lam(model, y), lam(scaled, c * y), rtol=1e-7, atol=1e-9)


def test_remove_outlier_undoes_pattern():
    pi = ao_detect.pi_weights(ArimaModel.arma(ar=(0.7,), ma=(0.2,)), 40)
    base = np.random.default_rng(1).normal(size=40)
    e = base + oracles.ao_pattern_residuals(pi, 40, 12, 5.0)
    np.testing.assert_allclose(ao_detect.remove_outlier(e, pi, 12, 5.0), base, atol=1e-12)


def test_search_white_noise_is_plain_thresholding():
    e = np.random.default_rng(2).normal(size=80)
    e[[10, 50]] = [9.0, -8.0]
    found, _ = ao_detect.search_outliers(e, np.zeros(79), 3.0)
    sigma = ao_detect._scale(e, True)
    assert set(found) >= {10, 50}
    assert set(found) <= set(np.flatnonzero(np.abs(e) > 3.0 * 0.5 * sigma))


def test_constant_plus_impulse_one_outer_iteration():
    y = np.full(60, 5.0)
    y[30] = 15.0
    res = ao_detect.detect_spikes_ao(y)
    assert res.spikes.indices == (30,)
    assert res.info["outer_iterations"] == 1
    assert res.info["outliers"][30] == pytest.approx(10.0)


def test_negative_outliers_not_reported():
    y = np.full(60, 5.0)
    y[30] = -5.0
    res = ao_detect.detect_spikes_ao(y)
    assert len(res.spikes) == 0
    assert 30 in res.info["outliers"]


def test_known_outliers_grow_and_respect_cap():
    rng = np.random.default_rng(3)
    model = GENERATORS["los_angeles"].model
    y = arima.simulate(model, 96, rng).values.copy()
    y[rng.choice(96, 30, replace=False)] += 25
    res = ao_detect.detect_spikes_ao(y)
    assert len(res.info["outliers"]) <= 96 // 5
    assert res.info["outer_iterations"] <= 10


def test_reestimate_recovers_sizes():
    model = GENERATORS["los_angeles"].model
    y = arima.simulate(model, 96, np.random.default_rng(4)).values.copy()
    y[[20, 60]] += [15.0, 12.0]
    fitted, omegas = ao_detect.reestimate(y, arima.fit(y, 1, 0, 0).model, [20, 60], True)
    assert omegas[20] == pytest.approx(15.0, abs=4.0)
    assert omegas[60] == pytest.approx(12.0, abs=4.0)
    assert abs(fitted.ar[0] - 0.436) < 0.3


def test_la_single_spike_located():
    gen = GENERATORS["los_angeles"]
    rng = np.random.default_rng(5)
    hits = 0
    for _ in range(200):
        y = simulate_series(gen, 96, rng).values.copy()
        T = int(rng.integers(96))
        y[T] += 0.5 * y.mean()
        hits += T in ao_detect.detect_spikes_ao(y).spikes
    assert hits / 200 >= 0.65


def test_clean_ar1_specificity():
    gen = GENERATORS["los_angeles"]
    rng = np.random.default_rng(6)
    spec = [1 - len(ao_detect.detect_spikes_ao(simulate_series(gen, 96, rng)).spikes) / 96 for _ in range(200)]
    assert np.mean(spec) >= 0.99
