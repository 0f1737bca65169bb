import numpy as np
import pytest

from hdblp.dgp import DgpConfig, generate_dataset
from hdblp.nuisance import NuisanceFit, make_cache, make_folds
from hdblp.orthogonal import (Box, EstimateReport, MomentSystem, ThetaOne, asymptotic_se,
                              crossfit_arrays, gmm_objective, minimize_gmm, optimal_weight, psi_moment,
                              sandwich, weight_from_contributions)
from hdblp.shares import DEFAULT_QUADRATURE


def oracle_system(ds, cache):
    cfg = ds.truth.config
    obs = ds.obs
    return MomentSystem(obs.z - obs.x @ cfg.Pi0.T, obs.x @ cfg.beta0, obs.p, cache)


@pytest.fixture(scope="module")
def noiseless():
    ds = generate_dataset(DgpConfig(T=60, d_x=12, seed=4, xi_scale=0.0))
    return ds, make_cache(ds.obs, DEFAULT_QUADRATURE)


@pytest.fixture(scope="module")
def noisy():
    ds = generate_dataset(DgpConfig(T=80, d_x=12, seed=5))
    return ds, make_cache(ds.obs, DEFAULT_QUADRATURE)


def test_psi_zero_at_truth_without_demand_shock(noiseless):
    ds, _ = noiseless
    cfg = ds.truth.config
    for t in range(5):
        m = psi_moment(ds.obs.market(t), 1.0, -1.0, cfg.Pi0, cfg.beta0)
        assert np.abs(m).max() < 1e-9


def test_psi_mean_near_zero_in_large_sample():
    ds = generate_dataset(DgpConfig(T=5000, d_x=9, seed=8))
    cache = make_cache(ds.obs, DEFAULT_QUADRATURE)
    psi = oracle_system(ds, cache).market_moments(1.0, -1.0)
    mean = psi.mean(axis=0)
    se = psi.std(axis=0) / np.sqrt(psi.shape[0])
    assert np.all(np.abs(mean) <= 3 * se)


def test_objective_recomposition(noisy):
    ds, cache = noisy
    cfg = ds.truth.config
    system = oracle_system(ds, cache)
    sigma, alpha = 0.7, -0.8
    y = cache(sigma)
    direct = np.mean([psi_moment(ds.obs.market(t), sigma, alpha, cfg.Pi0, cfg.beta0, y=y[t])
                      for t in range(ds.obs.T)], axis=0)
    np.testing.assert_allclose(system.mean(sigma, alpha), direct, atol=1e-13)
    assert abs(gmm_objective(system, sigma, alpha) - direct @ direct) < 1e-13
    W = np.diag([1.0, 2.0, 3.0, 4.0])
    assert abs(gmm_objective(system, sigma, alpha, W) - direct @ W @ direct) < 1e-13
    np.testing.assert_allclose(system.market_moments(sigma, alpha).mean(axis=0), direct, atol=1e-13)
    np.testing.assert_allclose(system.contributions(sigma, alpha).mean(axis=0), direct, atol=1e-13)


def test_noiseless_recovery(noiseless):
    ds, cache = noiseless
    res = minimize_gmm(oracle_system(ds, cache))
    assert abs(res.theta.sigma - 1.0) < 1e-4
    assert abs(res.theta.alpha + 1.0) < 1e-4
    assert res.objective < 1e-12


def test_alpha_closed_form_matches_grid(noisy):
    ds, cache = noisy
    system = oracle_system(ds, cache)
    grid = np.linspace(-3, 1, 4001)
    for sigma in (0.3, 1.0, 2.2):
        vals = [system.objective(sigma, a) for a in grid]
        best = grid[int(np.argmin(vals))]
        assert abs(system.alpha_star(sigma) - best) <= grid[1] - grid[0]


def test_alpha_clipped_to_box(noisy):
    ds, cache = noisy
    # the unconstrained minimizer is near -1
    assert oracle_system(ds, cache).alpha_star(1.0, box=Box(alpha=(-0.5, 0.5))) == -0.5


def test_minimizer_dominates_grid_and_scale_invariant(noisy):
    ds, cache = noisy
    system = oracle_system(ds, cache)
    W = np.diag([1.0, 0.5, 2.0, 1.5])
    res = minimize_gmm(system, W)
    for s in Box().sigma_grid(61):
        assert res.objective <= system.objective(s, system.alpha_star(s, W), W) + 1e-15
    scaled = minimize_gmm(system, 7.0 * W)
    assert scaled.theta.sigma == res.theta.sigma
    assert abs(scaled.theta.alpha - res.theta.alpha) < 1e-12


def test_weight_identity_for_standard_normal():
    phi = np.random.default_rng(0).normal(size=(5000, 3))
    W = weight_from_contributions(phi)
    assert np.linalg.norm(W - np.eye(3), 2) < 0.1
    np.testing.assert_allclose(W, W.T, atol=1e-12)
    np.testing.assert_allclose(weight_from_contributions(2 * phi), W / 4, rtol=1e-12)


def test_weight_scalar_case():
    phi = np.array([1.0, -2.0, 3.0])
    W = weight_from_contributions(phi)
    assert W.shape == (1, 1)
    assert abs(W[0, 0] - 1.0 / np.mean(phi ** 2)) < 1e-14


def test_weight_ridge_and_failure():
    phi = np.zeros((10, 2))
    phi[:, 0] = np.arange(10)
    # rank-deficient: ridge makes it factorizable
    W = weight_from_contributions(phi)
    assert np.all(np.isfinite(W))
    with pytest.raises(np.linalg.LinAlgError):
        weight_from_contributions(np.zeros((5, 2)))


def test_optimal_weight_uses_contributions(noisy):
    ds, cache = noisy
    system = oracle_system(ds, cache)
    theta = ThetaOne(1.0, -1.0)
    phi = system.contributions(1.0, -1.0)
    np.testing.assert_allclose(optimal_weight(system, theta), np.linalg.inv(phi.T @ phi / len(phi)),
                               rtol=1e-8)


def test_sandwich_scalar_toy():
    V = sandwich(np.array([[1.0]]), np.array([[1.0]]), np.array([[4.0]]), 100)
    assert abs(V[0, 0] - 0.04) < 1e-15
    assert abs(np.sqrt(V[0, 0]) - 0.2) < 1e-15


def test_vcov_properties(noisy):
    ds, cache = noisy
    system = oracle_system(ds, cache)
    theta = ThetaOne(1.0, -1.0)
    W = np.diag([1.0, 2.0, 0.5, 1.0])
    V, se = asymptotic_se(system, theta, W)
    np.testing.assert_allclose(V, V.T, atol=1e-15)
    assert np.all(np.linalg.eigvalsh(V) >= -1e-15)
    np.testing.assert_allclose(se, np.sqrt(np.diag(V)))
    V2, _ = asymptotic_se(system, theta, 3.0 * W)
    np.testing.assert_allclose(V2, V, rtol=1e-10)


def test_jacobian_matches_finite_difference(noisy):
    ds, cache = noisy
    system = oracle_system(ds, cache)
    h = 1e-5
    G = system.jacobian(0.9)
    fd = (system.mean(0.9 + h, -1.0) - system.mean(0.9 - h, -1.0)) / (2 * h)
    np.testing.assert_allclose(G[0], fd, rtol=1e-5, atol=1e-9)
    np.testing.assert_allclose(G[1], system.mean(0.9, 1.0) - system.mean(0.9, 0.0), atol=1e-13)


def test_crossfit_uses_own_fold(noisy):
    ds, cache = noisy
    obs = ds.obs
    plan = make_folds(obs.T, 4)
    fits = []
    for l in range(4):
        Pi = np.full((obs.d_z, obs.d_x), float(l))
        beta = np.full(obs.d_x, 10.0 * l)
        fits.append(NuisanceFit(Pi, np.zeros(obs.d_x), np.zeros(obs.d_z), 1.0, -1.0, beta, -1.0, beta))
    Z, offset = crossfit_arrays(obs, plan, fits)
    for t in range(obs.T):
        l = plan.assignments[t]
        np.testing.assert_allclose(Z[t], obs.z[t] - obs.x[t] @ fits[l].Pi_hat.T)
        np.testing.assert_allclose(offset[t], obs.x[t] @ fits[l].beta_hat)


def test_theta_box():
    with pytest.raises(ValueError):
        ThetaOne(4.0, 0.0)
    with pytest.raises(ValueError):
        Box(sigma=(1.0, 0.0))
    np.testing.assert_array_equal(ThetaOne(1.0, -1.0).as_array(), [1.0, -1.0])


def test_report_json_round_trip():
    rep = EstimateReport(estimator="Oracle2", sigma=1.1, alpha=-0.9, se=(0.2, float("nan")),
                         vcov=[[0.04, 0.0], [0.0, float("nan")]], converged=True)
    back = EstimateReport.from_json(rep.to_json())
    assert back.sigma == 1.1 and back.se[0] == 0.2 and np.isnan(back.se[1])
    assert np.isnan(back.vcov[1][1])
    assert back.ok
