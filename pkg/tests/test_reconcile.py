import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gts.hierarchy import build_hierarchy, rates_summing_stack, summing_matrix_counts, summing_matrix_rates
from gts.reconcile import (
    ReconciliationError,
    bottom_up,
    gls_combine,
    ols_combine,
    projection,
    reconcile,
    reconcile_paths,
    wls_beta,
)

S3 = np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])


def normal_eq(S, y, w=None):
    W = np.eye(S.shape[0]) if w is None else np.diag(w)
    return np.linalg.inv(S.T @ W @ S) @ S.T @ W @ y


def aus_S(rng):
    h = build_hierarchy({"sex": ["F", "M"], "region": [f"R{i}" for i in range(1, 9)]})
    return h, summing_matrix_rates(h, rng.uniform(100, 5000, 16)).matrix


def test_ols_worked_example():
    r = ols_combine(np.array([10.0, 4.0, 5.0]), S3)
    np.testing.assert_allclose(r.beta, [13 / 3, 16 / 3], atol=1e-12)
    np.testing.assert_allclose(r.values, [29 / 3, 13 / 3, 16 / 3], atol=1e-12)
    assert r.method == "ols"


def test_ols_fixes_coherent_and_zero(rng):
    beta = rng.normal(size=2)
    np.testing.assert_allclose(ols_combine(S3 @ beta, S3).values, S3 @ beta, atol=1e-12)
    np.testing.assert_array_equal(ols_combine(np.zeros(3), S3).values, np.zeros(3))


def test_bottom_up_examples():
    h = build_hierarchy({"sex": ["F", "M"]})
    S = summing_matrix_rates(h, [100.0, 100.0])
    r = bottom_up(np.array([9.0, 0.02, 0.04]), S)
    assert r.values[0] == pytest.approx(0.03)
    np.testing.assert_array_equal(r.values[1:], [0.02, 0.04])


def test_bottom_up_three_level_chain(rng):
    h, S = aus_S(rng)
    base = rng.uniform(0.001, 0.01, 27)
    r = bottom_up(base, S)
    E = np.diag(S[0])  # exposure shares relative to the total
    f_row = h.index(("F", "T"))
    f_cols = h.descendants(("F", "T"))
    expected = S[f_row, f_cols] @ base[-16:][f_cols]
    assert r.values[f_row] == pytest.approx(expected, rel=1e-14)
    np.testing.assert_array_equal(r.values[-16:], base[-16:])
    assert E.shape == (16, 16)


def test_bottom_up_coherent_base_unchanged(rng):
    h, S = aus_S(rng)
    base = S @ rng.uniform(0.001, 0.01, 16)
    np.testing.assert_allclose(bottom_up(base, S).values, base, atol=1e-15)
    np.testing.assert_allclose(ols_combine(base, S).values, base, atol=1e-14)


def test_gls_uniform_equals_ols(rng):
    _, S = aus_S(rng)
    base = rng.normal(size=(27, 4))
    a = ols_combine(base, S).values
    b = gls_combine(base, S, np.full(27, 0.37)).values
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_gls_large_weight_pins_series(rng):
    _, S = aus_S(rng)
    base = rng.uniform(0.01, 0.02, 27)
    v = np.ones(27)
    v[5] = 1e-12
    r = gls_combine(base, S, v)
    assert abs(r.values[5] - base[5]) <= 1e-4 * abs(base[5])


def test_gls_weighted_oracle():
    base = np.array([10.0, 4.0, 5.0])
    v = 1.0 / np.array([1.0, 1.0, 4.0])
    r = gls_combine(base, S3, v)
    np.testing.assert_allclose(r.beta, normal_eq(S3, base, np.array([1.0, 1.0, 4.0])), atol=1e-12)


def test_gls_errors_name_series():
    with pytest.raises(ReconciliationError, match="F"):
        gls_combine(np.ones(3), S3, [1.0, 0.0, 1.0], labels=["Total", "F", "M"])
    with pytest.raises(ReconciliationError):
        reconcile("gls", np.ones(3), S3)
    with pytest.raises(ReconciliationError):
        reconcile("top-down", np.ones(3), S3)


def test_dimension_errors():
    with pytest.raises(ReconciliationError):
        ols_combine(np.ones(4), S3)
    with pytest.raises(ReconciliationError):
        bottom_up(np.ones((3, 2)), np.stack([S3] * 3))
    with pytest.raises(ReconciliationError):
        ols_combine(np.array([1.0, np.nan, 2.0]), S3)


def test_rank_deficiency_detected():
    with pytest.raises(ReconciliationError):
        wls_beta(np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]]), np.ones(3))


def test_per_horizon_matrices(rng):
    h = build_hierarchy({"sex": ["F", "M"], "region": ["R1", "R2", "R3"]})
    E = rng.uniform(100, 1000, (5, 6))
    S_h = rates_summing_stack(h, E)
    base = rng.normal(size=(h.m, 5))
    r = ols_combine(base, S_h)
    for t in range(5):
        np.testing.assert_allclose(r.values[:, t], S_h[t] @ normal_eq(S_h[t], base[:, t]), atol=1e-10)
    r_list = ols_combine(base, [summing_matrix_rates(h, E[t]) for t in range(5)])
    np.testing.assert_allclose(r_list.values, r.values, atol=1e-14)


def test_projection_identities(rng):
    _, S = aus_S(rng)
    w = rng.uniform(0.1, 10, 27)
    P = projection(S, w)
    np.testing.assert_allclose(P @ S, np.eye(16), atol=1e-10)
    np.testing.assert_allclose(S @ P @ S, S, atol=1e-10)


def test_idempotence(rng):
    _, S = aus_S(rng)
    base = rng.normal(size=(27, 3))
    v = rng.uniform(0.5, 2.0, 27)
    for method in ("ols", "gls"):
        once = reconcile(method, base, S, v).values
        twice = reconcile(method, once, S, v).values
        np.testing.assert_allclose(twice, once, atol=1e-10)


def test_permutation_equivariance(rng):
    h = build_hierarchy({"sex": ["F", "M"]})
    S = summing_matrix_rates(h, [30.0, 70.0]).matrix
    base = rng.normal(size=3)
    perm = [0, 2, 1]
    a = ols_combine(base, S).beta
    b = ols_combine(base[perm], S[perm][:, [1, 0]]).beta
    np.testing.assert_allclose(b, a[[1, 0]], atol=1e-12)


def test_single_bottom_series():
    h = build_hierarchy({"a": ["x"], "b": ["y"]})
    S = summing_matrix_counts(h).matrix
    base = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.allclose(bottom_up(base, S).values, 4.0)
    assert np.allclose(ols_combine(base, S).values, base.mean())


def test_reconcile_paths_matches_loop(rng):
    h = build_hierarchy({"sex": ["F", "M"], "region": ["R1", "R2"]})
    E = rng.uniform(100, 1000, (7, 3, 4))
    S = rates_summing_stack(h, E)
    paths = rng.normal(size=(7, h.m, 3))
    out = reconcile_paths("ols", paths, S)
    for p in range(7):
        np.testing.assert_allclose(out[p], ols_combine(paths[p], S[p]).values, atol=1e-12)
    out = reconcile_paths("bottom-up", paths, S)
    np.testing.assert_allclose(out[3], bottom_up(paths[3], S[3]).values, atol=1e-14)
    with pytest.raises(ReconciliationError):
        reconcile_paths("gls", paths, S)


@settings(max_examples=40, deadline=None)
@given(n_b=st.integers(2, 8), seed=st.integers(0, 2**32 - 1))
def test_coherence_all_methods(n_b, seed):
    rng = np.random.default_rng(seed)
    h = build_hierarchy({"a": ["x", "y"], "b": [f"b{i}" for i in range(n_b)]})
    S = summing_matrix_rates(h, rng.uniform(10, 1000, h.m_bottom)).matrix
    base = rng.uniform(0, 0.1, (h.m, 3))
    for method in ("bottom-up", "ols", "gls"):
        r = reconcile(method, base, S, rng.uniform(0.1, 1, h.m))
        np.testing.assert_allclose(r.values, S @ r.beta, atol=1e-10)
        np.testing.assert_allclose(r.values[: h.m - h.m_bottom], S[: h.m - h.m_bottom] @ r.beta, atol=1e-10)
