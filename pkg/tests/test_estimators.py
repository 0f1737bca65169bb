import numpy as np
import pytest

from hdblp.dgp import Dataset, DgpConfig, generate_dataset
from hdblp.estimators import (ALL_ESTIMATORS, EstimationSession, EstimatorConfig, EstimatorKind, run_all,
                              run_estimator, score)
from hdblp.nuisance import TuningConfig
from hdblp.orthogonal import EstimateReport

FIXED = {"Pi": 0.05, "p": 0.05, "theta": 0.02, "beta": 0.05}


def fast_config(**kw):
    return EstimatorConfig(n_folds=4, grid_points=31, lambdas=dict(FIXED), **kw)


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(DgpConfig(T=24, d_x=15, seed=21))


@pytest.fixture(scope="module")
def reports(dataset):
    return run_all(dataset, ALL_ESTIMATORS, fast_config())


def test_parse_names():
    assert EstimatorKind.parse("neyman-orthogonal-opt") is EstimatorKind.NeymanOrthogonalOpt
    assert EstimatorKind.parse("oracle_1") is EstimatorKind.Oracle1
    with pytest.raises(ValueError):
        EstimatorKind.parse("ols")
    assert EstimatorKind.Oracle2.needs_truth and not EstimatorKind.Preliminary.needs_truth


def test_every_kind_reports(reports):
    assert [r.estimator for r in reports] == [k.value for k in ALL_ESTIMATORS]
    for r in reports:
        assert r.ok, r.error
        assert np.isfinite([r.sigma, r.alpha, *r.se, *r.tstats]).all()
        V = np.asarray(r.vcov)
        np.testing.assert_allclose(V, V.T, atol=1e-14)
        np.testing.assert_allclose(r.se, np.sqrt(np.diag(V)))
        assert 0.0 <= r.sigma <= 3.0


def test_tstats_against_truth(reports):
    r = reports[0]
    assert abs(r.tstats[0] - (r.sigma - 1.0) / r.se[0]) < 1e-12
    assert abs(r.tstats[1] - (r.alpha + 1.0) / r.se[1]) < 1e-12
    assert 0.0 <= r.pvalues[0] <= 1.0


def test_feasible_estimators_ignore_truth(dataset, reports):
    blind = Dataset(obs=dataset.obs)
    feasible = [k for k in ALL_ESTIMATORS if not k.needs_truth]
    for kind, rep in zip(feasible, run_all(blind, feasible, fast_config())):
        ref = next(r for r in reports if r.estimator == kind.value)
        assert rep.sigma == ref.sigma and rep.alpha == ref.alpha
        assert rep.se == ref.se
        # without truth there is nothing to test against
        assert np.isnan(rep.tstats[0])


def test_oracle_without_truth_is_recorded_not_raised(dataset):
    rep = run_estimator("Oracle1", Dataset(obs=dataset.obs), fast_config())
    assert not rep.ok
    assert "true parameters" in rep.error


def test_oracle_never_reads_estimated_nuisances(dataset):
    session = EstimationSession(dataset, fast_config())
    run_estimator(EstimatorKind.Oracle2, dataset, session=session)
    run_estimator(EstimatorKind.Oracle1, dataset, session=session)
    assert session._fits is None and session._prelim is None


def test_oracle2_noiseless_recovery():
    ds = generate_dataset(DgpConfig(T=40, d_x=12, seed=3, xi_scale=0.0))
    rep = run_estimator("Oracle2", ds, fast_config())
    assert abs(rep.sigma - 1.0) < 1e-4 and abs(rep.alpha + 1.0) < 1e-4


def test_single_instrument_weighting_is_irrelevant():
    ds = generate_dataset(DgpConfig(T=24, d_x=10, d_z=1, seed=6))
    a, b = run_all(ds, [EstimatorKind.NeymanOrthogonal, EstimatorKind.NeymanOrthogonalOpt], fast_config())
    assert abs(a.sigma - b.sigma) < 1e-12
    assert abs(a.alpha - b.alpha) < 1e-12


def test_theoretical_mode_runs(dataset):
    cfg = EstimatorConfig(n_folds=4, grid_points=31, tuning=TuningConfig(mode="theoretical"))
    rep = run_estimator("NeymanOrthogonal", dataset, cfg)
    assert rep.ok
    lam = rep.extra["lambdas"][0]
    assert lam["theta"] > 0 and lam["beta"] > 0


def test_score_handles_missing_se():
    rep = EstimateReport(estimator="x", sigma=1.2, alpha=-1.0, se=(0.1, float("nan")))
    score(rep, (1.0, -1.0))
    assert abs(rep.tstats[0] - 2.0) < 1e-12 and np.isnan(rep.tstats[1])
    assert rep.extra["reject"] == [True, None]
