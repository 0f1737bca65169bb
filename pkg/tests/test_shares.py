import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdblp.shares import (DEFAULT_QUADRATURE, InversionCache, InversionError, QuadratureRule,
                          compute_shares, contraction_map, dy_dsigma, invert_shares, log_share_jacobian_y,
                          log_shares,
                          node_shares, share_derivative_sigma, share_jacobian_y, validate_shares)


def logit(y):
    e = np.exp(y)
    return e / (1.0 + e.sum(axis=-1, keepdims=True))


def random_market(rng, J=4, scale=2.0):
    return rng.uniform(-scale, scale, J), rng.uniform(-scale, scale, J), rng.uniform(0.0, 2.5)


def test_quadrature_normalized_and_exact_on_moments():
    q = QuadratureRule.gauss_hermite(21)
    assert len(q) == 21
    assert abs(q.weights.sum() - 1.0) < 1e-14
    # standard normal moments 0, 1, 0, 3
    for k, m in [(1, 0.0), (2, 1.0), (3, 0.0), (4, 3.0)]:
        assert abs(q.weights @ q.nodes ** k - m) < 1e-12


def test_quadrature_rejects_bad_weights():
    with pytest.raises(ValueError):
        QuadratureRule(np.zeros(2), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        QuadratureRule(np.zeros(2), np.array([1.0]))


def test_one_product_sigma_zero():
    s = compute_shares(np.array([0.0]), np.array([1.0]), 0.0)
    assert abs(s[0] - 0.5) < 1e-15
    assert abs(invert_shares(np.array([0.5]), np.array([1.0]), 0.0)[0]) < 1e-12


def test_two_products_sigma_zero():
    s = compute_shares(np.array([1.0, 2.0]), np.zeros(2), 0.0)
    denom = 1 + np.e + np.e ** 2
    np.testing.assert_allclose(s, [np.e / denom, np.e ** 2 / denom], rtol=0, atol=1e-15)


def test_large_utilities_do_not_overflow():
    s = compute_shares(np.array([700.0, 0.0]), np.array([1.0, 1.0]), 1.0)
    assert np.all(np.isfinite(s))
    assert s[0] > 1 - 1e-12
    ls = log_shares(np.array([-800.0, 0.0]), np.ones(2), 1.0)
    assert np.all(np.isfinite(ls))
    assert abs(ls[0] + 800.0 + np.log(2.0)) < 1e-9


def test_node_shares_sum_below_one():
    rng = np.random.default_rng(0)
    y, p, sigma = random_market(rng)
    sq = node_shares(y, p, sigma)
    assert sq.shape == (4, 21)
    assert np.all(sq.sum(axis=0) < 1)


def test_batched_matches_loop():
    rng = np.random.default_rng(1)
    y = rng.normal(size=(7, 3))
    p = rng.normal(size=(7, 3))
    batch = compute_shares(y, p, 0.8)
    for t in range(7):
        np.testing.assert_array_equal(batch[t], compute_shares(y[t], p[t], 0.8))
    inv = invert_shares(batch, p, 0.8)
    np.testing.assert_allclose(inv, y, atol=1e-9)


def test_shape_mismatch_and_invalid_shares():
    with pytest.raises(ValueError):
        compute_shares(np.zeros(3), np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        validate_shares(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        validate_shares(np.array([0.0, 0.2]))
    with pytest.raises(ValueError):
        invert_shares(np.array([0.2, 0.2]), np.zeros(3), 1.0)


def test_inversion_reports_iterations():
    rng = np.random.default_rng(2)
    y, p, sigma = random_market(rng)
    s = compute_shares(y, p, sigma)
    yy, info = invert_shares(s, p, sigma, full_output=True)
    assert info.converged and info.residual <= 1e-12
    np.testing.assert_allclose(yy, y, atol=1e-9)


def test_contraction_only_mode_converges_on_moderate_case():
    rng = np.random.default_rng(3)
    y, p, sigma = random_market(rng, scale=1.0)
    s = compute_shares(y, p, sigma)
    yy = invert_shares(s, p, sigma, method="contraction")
    np.testing.assert_allclose(yy, y, atol=1e-9)


def test_nonconvergence_raises():
    rng = np.random.default_rng(4)
    y, p, _ = random_market(rng)
    s = compute_shares(y, p, 2.0)
    with pytest.raises(InversionError):
        invert_shares(s, p, 2.0, method="contraction", max_iter=2)


def test_fixed_point_of_map_is_true_utility():
    rng = np.random.default_rng(5)
    y, p, sigma = random_market(rng)
    s = compute_shares(y, p, sigma)
    np.testing.assert_allclose(contraction_map(y, s, p, sigma), y, atol=1e-13)


def test_jacobian_columns_sum_matches_outside_share():
    # d(s_0)/dy_j = -sum_i ds_i/dy_j and the outside share falls when any utility rises
    rng = np.random.default_rng(6)
    y, p, sigma = random_market(rng)
    jac = share_jacobian_y(y, p, sigma)
    assert np.all(jac.sum(axis=0) > 0)
    assert np.all(np.diag(jac) > 0)
    off = jac[~np.eye(4, dtype=bool)]
    assert np.all(off < 0)
    np.testing.assert_allclose(jac, jac.T, atol=1e-15)


def test_sigma_derivative_zero_with_equal_prices():
    # with identical prices the taste shock shifts every inside good alike
    y = np.array([0.1, -0.3, 0.5])
    p = np.full(3, 1.5)
    ds = share_derivative_sigma(y, p, 0.0)
    np.testing.assert_allclose(ds, 0.0, atol=1e-15)


def test_dy_dsigma_finite_difference():
    rng = np.random.default_rng(7)
    y, p, sigma = random_market(rng)
    s = compute_shares(y, p, sigma)
    h = 1e-5
    fd = (invert_shares(s, p, sigma + h) - invert_shares(s, p, sigma - h)) / (2 * h)
    np.testing.assert_allclose(dy_dsigma(s, p, sigma), fd, rtol=1e-5, atol=1e-8)


def test_cache_memoizes():
    rng = np.random.default_rng(8)
    y = rng.normal(size=(5, 4))
    p = rng.normal(size=(5, 4))
    s = compute_shares(y, p, 1.0)
    cache = InversionCache(s, p)
    a = cache(1.0)
    assert cache(1.0) is a
    assert len(cache) == 1
    np.testing.assert_allclose(a, y, atol=1e-9)
    d = cache.derivative(1.0)
    assert cache.derivative(1.0) is d


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=1, max_size=6),
       st.floats(0.0, 2.5), st.integers(0, 2 ** 31 - 1))
def test_round_trip_property(ys, sigma, seed):
    y = np.array(ys)
    p = np.random.default_rng(seed).uniform(-2, 2, y.size)
    s = compute_shares(y, p, sigma)
    if s.sum() > 1 - 1e-9 or s.min() < 1e-250:
        return
    np.testing.assert_allclose(invert_shares(s, p, sigma), y, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0, 2), st.integers(0, 2 ** 31 - 1))
def test_shares_increase_in_own_utility(dy, sigma, seed):
    rng = np.random.default_rng(seed)
    y, p = rng.normal(size=3), rng.normal(size=3)
    base = compute_shares(y, p, sigma)
    bumped = y.copy()
    bumped[0] += abs(dy) + 1e-3
    new = compute_shares(bumped, p, sigma)
    assert new[0] > base[0]
    assert np.all(new[1:] <= base[1:])


def test_default_quadrature_used():
    assert DEFAULT_QUADRATURE.nodes.size == 21


def test_log_jacobian_matches_ratio():
    rng = np.random.default_rng(3)
    y, p = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    ratio = share_jacobian_y(y, p, 1.3) / compute_shares(y, p, 1.3)[..., None]
    np.testing.assert_allclose(log_share_jacobian_y(y, p, 1.3), ratio, atol=1e-13)


def test_hard_market_with_tiny_outside_share():
    # found in a simulated panel; uncapped Newton steps stalled here at sigma=3
    s = np.array([0.78379896, 0.08385075, 0.07002509, 0.05525966])
    p = np.array([-4.48908747, 5.1115636, 4.43341352, 5.39953218])
    y, info = invert_shares(s, p, 3.0, full_output=True)
    assert info.iterations < 100
    np.testing.assert_allclose(compute_shares(y, p, 3.0), s, rtol=1e-11)
    y_slow = invert_shares(s, p, 3.0, method="contraction", max_iter=20000)
    np.testing.assert_allclose(y, y_slow, atol=1e-8)
