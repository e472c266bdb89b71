import dataclasses
import math

import numpy as np
import pytest

from conftest import ar1
from gts import arima
from gts.arima import ArimaFitError, ArimaOrder, OrderBounds


def kpss_oracle(x):
    """Textbook KPSS: eta = n^-2 sum S_t^2 / s2_Bartlett, written independently."""
    x = list(map(float, x))
    n = len(x)
    mean = sum(x) / n
    e = [v - mean for v in x]
    S, acc = [], 0.0
    for v in e:
        acc += v
        S.append(acc)
    L = int(4 * (n / 100) ** 0.25)
    gamma = [sum(e[t] * e[t - s] for t in range(s, n)) / n for s in range(L + 1)]
    s2 = gamma[0] + 2 * sum((1 - s / (L + 1)) * gamma[s] for s in range(1, L + 1))
    return sum(v * v for v in S) / n**2 / s2


# --- KPSS / differencing ----------------------------------------------------


def test_kpss_matches_oracle(rng):
    for _ in range(10):
        x = rng.normal(size=int(rng.integers(10, 200))).cumsum() * rng.uniform(0.1, 10)
        assert arima.kpss_statistic(x) == pytest.approx(kpss_oracle(x), rel=1e-10, abs=1e-12)


def test_kpss_examples():
    x = np.random.default_rng(0).normal(size=200)
    assert arima.kpss_statistic(x) < 0.463
    assert arima.kpss_statistic(np.arange(200.0)) > 0.463
    assert arima.kpss_statistic(np.full(50, 3.0)) == 0.0
    assert arima.kpss_is_stationary(np.full(50, 3.0))
    assert arima.kpss_lags(100) == 4 and arima.kpss_lags(200) == 4 and arima.kpss_lags(50) == 3


def test_kpss_short_series():
    with pytest.raises(ValueError):
        arima.kpss_statistic(np.arange(9.0))


def test_select_d():
    assert arima.select_d(ar1(np.random.default_rng(3), 200, 0.5)) == 0
    assert arima.select_d(np.full(40, 1.0)) == 0
    rw = np.random.default_rng(5).normal(size=300).cumsum()
    assert arima.select_d(rw) >= 1
    with pytest.raises(ValueError):
        arima.select_d(np.arange(11.0), d_max=2)


# --- transforms and fitting --------------------------------------------------


def test_pacf_round_trip(rng):
    for k in range(1, 6):
        u = rng.uniform(-2, 2, k)
        phi = arima._pacf_to_coef(u)
        assert arima.min_root_modulus(phi) > 1
        np.testing.assert_allclose(arima._coef_to_pacf(phi), u, atol=1e-8)


def test_aicc_formula():
    # AIC = 100 with k = 3  ->  -2 loglik = 94
    assert arima.aicc(-47.0, 3, 50) == pytest.approx(100 + 24 / 46, abs=1e-12)
    assert arima.aicc(-47.0, 3, 4) == math.inf


def test_ar1_recovery():
    x = ar1(np.random.default_rng(11), 500, 0.7)
    m = arima.fit(x, (1, 0, 0))
    assert 0.6 <= m.phi[0] <= 0.8
    lag = np.column_stack([np.ones(499), x[:-1]])
    ls_phi = np.linalg.lstsq(lag, x[1:], rcond=None)[0][1]
    assert abs(m.phi[0] - ls_phi) < 0.02
    assert m.n_params == 3 and m.n_eff == 500


def test_white_noise_closed_form():
    x = np.random.default_rng(2).normal(3.0, 2.0, 200)
    m = arima.fit(x, (0, 0, 0))
    assert m.mean == pytest.approx(x.mean(), rel=1e-6)
    assert m.sigma2 == pytest.approx(x.var(), rel=0.05)
    ll = -0.5 * len(x) * (math.log(2 * math.pi * x.var()) + 1)
    assert m.loglik == pytest.approx(ll, rel=1e-8)


def test_fit_too_short():
    with pytest.raises(ArimaFitError):
        arima.fit(np.arange(5.0), (2, 0, 2))
    with pytest.raises(ArimaFitError):
        arima.auto_fit(np.random.default_rng(0).normal(size=15))


def test_fit_rejects_nonfinite():
    x = np.ones(30)
    x[3] = np.nan
    with pytest.raises(ArimaFitError):
        arima.fit(x, (0, 0, 0))


def test_roots_respected(rng):
    x = rng.normal(size=120).cumsum()
    for order in [(2, 1, 2), (3, 0, 1), (0, 1, 3)]:
        try:
            m = arima.fit(x, order)
        except ArimaFitError:
            continue
        assert arima.min_root_modulus(m.phi) > 1 + 1e-6
        assert arima.min_root_modulus(m.theta, +1) > 1 + 1e-6
        assert m.sigma2 > 0


def test_scale_equivariance():
    x = ar1(np.random.default_rng(8), 150, 0.6) + 5.0
    for order, a in [((1, 0, 1), 3.7), ((0, 1, 1), 1e-3), ((2, 0, 0), -2.0)]:
        f1 = arima.forecast(arima.fit(x, order), 6).mean
        f2 = arima.forecast(arima.fit(a * x, order), 6).mean
        np.testing.assert_allclose(f2, a * f1, rtol=1e-6)


def test_auto_fit_minimality_and_ties():
    x = ar1(np.random.default_rng(21), 120, 0.5)
    res = arima.auto_fit(x, OrderBounds(max_p=3, max_q=3), return_search=True)
    assert res.model.aicc <= min(res.candidates.values())
    assert all(o.d == res.model.order.d for o in res.candidates)
    best = min(res.candidates.items(), key=lambda kv: (kv[1], kv[0].p + kv[0].q, kv[0].p))[0]
    assert best == res.model.order


def test_auto_fit_deterministic():
    x = np.random.default_rng(4).normal(size=80).cumsum()
    a = arima.auto_fit(x, OrderBounds(max_p=2, max_q=2))
    b = arima.auto_fit(x, OrderBounds(max_p=2, max_q=2))
    assert a.order == b.order and a.aicc == b.aicc


def test_constant_series():
    m = arima.auto_fit(np.full(30, 0.02))
    assert m.sigma2 == 0.0
    fc = arima.forecast(m, 4)
    np.testing.assert_allclose(fc.mean, 0.02)
    paths = arima.simulate_paths(m, 4, 10, 0)
    np.testing.assert_allclose(paths, 0.02)


# --- forecasting ---------------------------------------------------------------


def _manual(order, phi=(), theta=(), mean=0.0, sigma2=1.0, history=(0.0,), state=None):
    base = arima.fit(np.random.default_rng(0).normal(size=40).cumsum(), (0, 1, 0))
    r = max(len(phi), len(theta) + 1)
    return dataclasses.replace(
        base, order=ArimaOrder(*order), phi=np.array(phi, float), theta=np.array(theta, float),
        mean=mean, sigma2=sigma2, history=np.array(history, float),
        state=np.zeros(r) if state is None else np.array(state, float),
    )


def test_forecast_white_noise():
    m = _manual((0, 0, 0), mean=2.5, sigma2=0.3)
    fc = arima.forecast(m, 5)
    np.testing.assert_allclose(fc.mean, 2.5)
    np.testing.assert_allclose(fc.variance, 0.3)
    assert fc.one_step_variance == 0.3


def test_forecast_random_walk():
    m = _manual((0, 1, 0), sigma2=2.0, history=[1.0, 4.0, 7.0])
    fc = arima.forecast(m, 4)
    np.testing.assert_allclose(fc.mean, 7.0)
    np.testing.assert_allclose(fc.variance, 2.0 * np.arange(1, 5))


def test_forecast_ar1_by_hand():
    m = _manual((1, 0, 0), phi=[0.5], history=[0.3, 1.0], state=[1.0])
    np.testing.assert_allclose(arima.forecast(m, 3).mean, [0.5, 0.25, 0.125], atol=1e-15)


def test_forecast_uses_fitted_state():
    x = ar1(np.random.default_rng(1), 200, 0.7)
    m = arima.fit(x, (1, 0, 0))
    fc = arima.forecast(m, 2).mean
    assert fc[0] == pytest.approx(m.mean + m.phi[0] * (x[-1] - m.mean), rel=1e-10)


def test_psi_weights_variance_monotone():
    x = ar1(np.random.default_rng(6), 200, 0.6)
    m = arima.fit(x, (1, 0, 1))
    v = arima.forecast(m, 10).variance
    assert np.all(np.diff(v) >= 0) and v[0] == pytest.approx(m.sigma2)


@pytest.mark.parametrize("order", [(1, 0, 0), (0, 1, 1), (2, 1, 0)])
def test_simulation_matches_forecast(order):
    x = ar1(np.random.default_rng(13), 200, 0.6).cumsum() if order[1] else ar1(np.random.default_rng(13), 200, 0.6)
    m = arima.fit(x, order)
    fc = arima.forecast(m, 5)
    paths = arima.simulate_paths(m, 5, 100_000, 42)
    sd = np.sqrt(fc.variance)
    assert np.all(np.abs(paths.mean(axis=0) - fc.mean) <= 4 * sd / np.sqrt(100_000))
    np.testing.assert_allclose(paths.var(axis=0), fc.variance, rtol=0.03)


def test_simulation_deterministic():
    m = arima.fit(ar1(np.random.default_rng(1), 100, 0.5), (1, 0, 0))
    a = arima.simulate_paths(m, 6, 50, 7)
    b = arima.simulate_paths(m, 6, 50, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


def test_log_exposure_constant_and_growth():
    fc = arima.fit_forecast_log_exposure(np.full(40, 1000.0), 5)
    np.testing.assert_allclose(fc.mean, 1000.0, rtol=1e-9)
    t = np.arange(60)
    grow = np.exp(0.01 * t + 0.002 * np.random.default_rng(0).normal(size=60).cumsum())
    fc = arima.fit_forecast_log_exposure(grow * 5e4, 8, n_paths=20, rng_seed=1)
    assert fc.model.order.d >= 1
    assert np.all(np.diff(np.r_[grow[-1] * 5e4, fc.mean]) > 0)
    assert np.all(fc.paths > 0) and fc.paths.shape == (20, 8)
    with pytest.raises(ValueError):
        arima.fit_forecast_log_exposure(np.r_[np.ones(30), 0.0], 2)


def test_log_exposure_pure_exponential():
    e = 1000.0 * np.exp(0.01 * np.arange(60))
    fc = arima.fit_forecast_log_exposure(e, 5)
    assert fc.model.order.d >= 1
    np.testing.assert_allclose(fc.mean, e[-1] * np.exp(0.01 * np.arange(1, 6)), rtol=1e-9)


def test_drift_only_when_allowed():
    x = np.random.default_rng(3).normal(0.5, 1.0, 100).cumsum()
    plain = arima.auto_fit(x, OrderBounds(max_p=1, max_q=1), return_search=True)
    drift = arima.auto_fit(x, OrderBounds(max_p=1, max_q=1), return_search=True, allow_drift=True)
    assert not plain.model.include_mean
    assert any(isinstance(k, tuple) for k in drift.candidates)
    assert drift.model.aicc <= plain.model.aicc


# --- Monte-Carlo selection examples --------------------------------------------


@pytest.mark.slow
def test_white_noise_selects_small_orders():
    hits = 0
    for seed in range(100):
        m = arima.auto_fit(np.random.default_rng(seed).normal(size=300))
        hits += m.order.p + m.order.q <= 1
    print(f"white noise n=300: p+q<=1 in {hits}/100 seeds")
    assert hits >= 90


def test_arima110_selects_first_difference():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        x = ar1(rng, 400, 0.6).cumsum()
        hits += arima.select_d(x) == 1
    print(f"ARIMA(1,1,0) n=400: d=1 in {hits}/100 seeds")
    assert hits >= 90


def test_random_walk_differenced():
    hits = sum(arima.select_d(np.random.default_rng(s).normal(size=300).cumsum()) >= 1 for s in range(100))
    assert hits >= 90
