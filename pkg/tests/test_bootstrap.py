import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import trim_mean

from conftest import random_panel
from gts.arima import OrderBounds
from gts.bootstrap import (
    BootstrapError,
    interval_forecasts,
    meboot_panel,
    meboot_replicate,
    meboot_support,
)
from gts.hierarchy import aggregate_panel, build_hierarchy

EXAMPLE = np.array([4.0, 8.0, 12.0, 20.0, 36.0])
SMALL = OrderBounds(max_p=1, max_q=1)


def test_interval_means_example():
    sup = meboot_support(EXAMPLE)
    assert sup.interval_means[0] == 5.0
    # middle-interval formula: 0.25*4 + 0.5*8 + 0.25*12
    assert sup.interval_means[1] == 0.25 * 4 + 0.5 * 8 + 0.25 * 12 == 8.0
    assert sup.interval_means[-1] == 0.25 * 20 + 0.75 * 36
    assert sup.interval_means.mean() == pytest.approx(EXAMPLE.mean())


def test_support_limits():
    x = np.array([3.0, 1.0, 4.0, 1.5, 5.0, 9.0, 2.0, 6.0])
    sup = meboot_support(x)
    m_trim = trim_mean(np.abs(np.diff(x)), 0.1)
    assert sup.trimmed_mean == pytest.approx(m_trim)
    assert sup.knots[0] == pytest.approx(1.0 - m_trim)
    assert sup.knots[-1] == pytest.approx(9.0 + m_trim)
    np.testing.assert_allclose(sup.knots[1:-1], 0.5 * (np.sort(x)[:-1] + np.sort(x)[1:]))


def test_replicate_in_range_and_ranked(rng):
    x = rng.normal(size=40).cumsum()
    sup = meboot_support(x)
    for s in range(50):
        rep = meboot_replicate(x, s)
        assert rep.values.min() >= sup.knots[0] - 1e-12
        assert rep.values.max() <= sup.knots[-1] + 1e-12
        np.testing.assert_array_equal(np.argsort(rep.values, kind="stable"), rep.order)


def test_monotone_input():
    x = np.arange(10.0) ** 1.5
    rep = meboot_replicate(x, 3)
    np.testing.assert_array_equal(rep.order, np.arange(10))
    assert np.all(np.diff(rep.values) >= 0)


def test_constant_and_short():
    np.testing.assert_array_equal(meboot_replicate(np.full(6, 2.0), 0).values, np.full(6, 2.0))
    with pytest.raises(ValueError):
        meboot_replicate(np.arange(3.0), 0)


def test_mean_preserved():
    x = np.random.default_rng(5).normal(10, 3, 50)
    rng = np.random.default_rng(6)
    grand = np.mean([meboot_replicate(x, rng).values.mean() for _ in range(1000)])
    assert abs(grand - x.mean()) <= 0.01 * abs(x.mean())


def test_deterministic():
    x = np.random.default_rng(1).normal(size=30)
    np.testing.assert_array_equal(meboot_replicate(x, 9).values, meboot_replicate(x, 9).values)


def test_rank_invariance_exp(rng):
    x = rng.normal(size=25)
    for s in range(20):
        a = meboot_replicate(x, s)
        b = meboot_replicate(np.exp(x), s)
        np.testing.assert_array_equal(a.order, b.order)
        np.testing.assert_array_equal(np.argsort(a.values), np.argsort(b.values))


def test_panel_common_draws():
    x = np.random.default_rng(2).normal(size=30)
    rep = meboot_panel(np.vstack([x, x]), 4)
    np.testing.assert_array_equal(rep[0], rep[1])
    assert meboot_panel(np.random.default_rng(0).normal(size=(27, 20)), 1).shape == (27, 20)


def test_panel_antithetic():
    x = np.random.default_rng(3).normal(size=40).cumsum()
    rng = np.random.default_rng(8)
    corr = [np.corrcoef(*meboot_panel(np.vstack([x, -x]), rng))[0, 1] for _ in range(100)]
    assert np.mean(corr) <= -0.9


@settings(max_examples=40, deadline=None)
@given(n=st.integers(4, 60), seed=st.integers(0, 2**32 - 1))
def test_range_property(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n) * rng.uniform(0.01, 100)
    sup = meboot_support(x)
    rep = meboot_replicate(x, rng).values
    tol = 1e-9 * max(1.0, np.abs(sup.knots).max())
    assert rep.min() >= sup.knots[0] - tol and rep.max() <= sup.knots[-1] + tol


# --- intervals -------------------------------------------------------------------


def small_panel(seed=0, n=30):
    rng = np.random.default_rng(seed)
    h = build_hierarchy({"sex": ["F", "M"]})
    E = np.vstack([1000 * np.exp(0.01 * np.arange(n)), 1500 * np.exp(0.012 * np.arange(n))])
    r = 0.02 + np.cumsum(rng.normal(0, 0.0005, (2, n)), axis=1)
    return aggregate_panel(h, r * E, E, np.arange(1970, 1970 + n))


def test_interval_basic_and_deterministic():
    p = small_panel()
    a = interval_forecasts(p, 3, 0.2, 4, 30, "ols", rng_seed=11, bounds=SMALL)
    b = interval_forecasts(p, 3, 0.2, 4, 30, "ols", rng_seed=11, bounds=SMALL)
    np.testing.assert_array_equal(a.lower, b.lower)
    np.testing.assert_array_equal(a.upper, b.upper)
    assert a.lower.shape == (3, 3) and np.all(a.lower <= a.upper)
    assert (a.n_outer, a.n_inner, a.n_used) == (4, 30, 4)


def test_interval_parallel_same_result():
    p = small_panel(1)
    a = interval_forecasts(p, 2, 0.2, 3, 20, "bottom-up", rng_seed=5, bounds=SMALL, n_jobs=1)
    b = interval_forecasts(p, 2, 0.2, 3, 20, "bottom-up", rng_seed=5, bounds=SMALL, n_jobs=2)
    np.testing.assert_array_equal(a.lower, b.lower)


def test_interval_alpha_monotone():
    p = small_panel(2)
    wide = interval_forecasts(p, 2, 0.1, 3, 40, "base", rng_seed=3, bounds=SMALL)
    narrow = interval_forecasts(p, 2, 0.4, 3, 40, "base", rng_seed=3, bounds=SMALL)
    assert np.all(narrow.lower >= wide.lower) and np.all(narrow.upper <= wide.upper)


def test_base_and_bottom_up_share_bottom_paths():
    p = small_panel(3)
    E = np.full((2, 3), 1000.0)
    a = interval_forecasts(p, 3, 0.2, 3, 20, "base", rng_seed=7, bounds=SMALL, holdout_exposure=E)
    b = interval_forecasts(p, 3, 0.2, 3, 20, "bottom-up", rng_seed=7, bounds=SMALL, holdout_exposure=E)
    np.testing.assert_array_equal(a.lower[1:], b.lower[1:])
    np.testing.assert_array_equal(a.upper[1:], b.upper[1:])


def test_reconciled_intervals_coherent_bounds_exist():
    p = small_panel(4)
    iv = interval_forecasts(p, 2, 0.2, 3, 20, "bottom-up", rng_seed=1, bounds=SMALL,
                            holdout_exposure=np.full((2, 2), 500.0))
    assert np.all(iv.lower[0] <= iv.upper[0])
    assert np.all(iv.lower[0] >= np.minimum(iv.lower[1], iv.lower[2]) - 1e-12)
    assert np.all(iv.upper[0] <= np.maximum(iv.upper[1], iv.upper[2]) + 1e-12)


def test_degenerate_panel_collapses():
    h = build_hierarchy({"sex": ["F", "M"]})
    E = np.full((2, 25), 1000.0)
    p = aggregate_panel(h, np.vstack([np.full(25, 20.0), np.full(25, 30.0)]), E)
    iv = interval_forecasts(p, 3, 0.2, 2, 10, "ols", rng_seed=0, bounds=SMALL)
    np.testing.assert_allclose(iv.lower, iv.upper, atol=1e-15)
    np.testing.assert_allclose(iv.lower[:, 0], [0.025, 0.02, 0.03], atol=1e-12)


def test_interval_argument_errors():
    p = small_panel()
    with pytest.raises(ValueError):
        interval_forecasts(p, 2, method="gls")
    with pytest.raises(ValueError):
        interval_forecasts(p, 2, B=1)
    with pytest.raises(ValueError):
        interval_forecasts(p, 2, alpha=1.5)
    with pytest.raises(ValueError):
        interval_forecasts(p, 2, holdout_exposure=np.ones((3, 2)))


def test_too_many_skipped(monkeypatch):
    from gts import bootstrap
    from gts.arima import ArimaFitError

    def boom(*a, **k):
        raise ArimaFitError("nope")

    monkeypatch.setattr(bootstrap, "_fit_and_simulate", boom)
    with pytest.raises(BootstrapError):
        interval_forecasts(random_panel(np.random.default_rng(0), 1, 2, n=25), 2, B=3, P=5)
