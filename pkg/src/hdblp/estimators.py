"""The six estimators of ``(sigma, alpha)`` behind one entry point.

``run_estimator`` never raises on numerical trouble: failures are written
into the returned :class:`EstimateReport` so a Monte Carlo study can count
them and move on.  Work shared between estimators (inversions, the
full-sample preliminary fit, cross-fitted nuisances) lives on an
:class:`EstimationSession`.
"""

import enum
import math
import time
import traceback
from dataclasses import dataclass, field

import numpy as np

from .nuisance import (TuningConfig, cross_fit, cross_validate_step_a, make_cache, make_folds, step_a,
                       theoretical_lambdas)
from .orthogonal import (DEFAULT_BOX, Box, EstimateReport, MomentSystem, ThetaOne, asymptotic_se,
                         crossfit_system, minimize_gmm, optimal_weight)
from .shares import QuadratureRule


class EstimatorKind(enum.Enum):
    Preliminary = "Preliminary"
    NonOrthogonal = "NonOrthogonal"
    NeymanOrthogonal = "NeymanOrthogonal"
    NeymanOrthogonalOpt = "NeymanOrthogonalOpt"
    Oracle1 = "Oracle1"
    Oracle2 = "Oracle2"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().replace("-", "").replace("_", "").lower()
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise ValueError(f"unknown estimator {name!r}; choose from {[k.value for k in cls]}")

    @property
    def needs_truth(self):
        return self in (EstimatorKind.Oracle1, EstimatorKind.Oracle2)


ALL_ESTIMATORS = tuple(EstimatorKind)


@dataclass
class EstimatorConfig:
    box: Box = DEFAULT_BOX
    grid_points: int = 61
    search_tol: float = 1e-6
    n_folds: int = 6
    fold_mode: str = "paper"
    fold_seed: int = 0
    quad_nodes: int = 21
    inversion_tol: float = 1e-12
    inversion_max_iter: int = 1000
    tuning: TuningConfig = field(default_factory=TuningConfig)
    # fixed penalties by name ("Pi", "p", "theta", "beta"); others follow tuning.mode
    lambdas: dict = field(default_factory=dict)
    critical_value: float = 1.96


class EstimationSession:
    """Caches shared across the estimators run on one dataset."""

    def __init__(self, dataset, cfg=None):
        self.dataset = dataset
        self.cfg = cfg or EstimatorConfig()
        obs = dataset.obs
        self.quad = QuadratureRule.gauss_hermite(self.cfg.quad_nodes)
        self.cache = make_cache(obs, self.quad, self.cfg.inversion_tol, self.cfg.inversion_max_iter)
        self.sigma_grid = self.cfg.box.sigma_grid(self.cfg.grid_points)
        self._prelim = None
        self._lam_theta = None
        self._plan = None
        self._fits = None
        self._first_stage = None

    @property
    def obs(self):
        return self.dataset.obs

    @property
    def plan(self):
        if self._plan is None:
            self._plan = make_folds(self.obs.T, self.cfg.n_folds, self.cfg.fold_mode, self.cfg.fold_seed)
        return self._plan

    def lambda_theta(self):
        """Step A penalty, chosen once on the full sample unless fixed in the config."""
        if self._lam_theta is None:
            tuning = self.cfg.tuning
            lam = self.cfg.lambdas.get("theta")
            if lam is None and tuning.mode == "theoretical":
                obs = self.obs
                lam = theoretical_lambdas(obs.T, obs.d_x, obs.d_x + obs.d_z, tuning)["theta"]
            if lam is None or lam == "cv":
                lam = cross_validate_step_a(self.obs, np.arange(self.obs.T), self.cache,
                                            self.cfg.box.sigma, tuning).lam
            self._lam_theta = float(lam)
        return self._lam_theta

    def preliminary(self):
        if self._prelim is None:
            self._prelim = step_a(self.obs, np.arange(self.obs.T), self.lambda_theta(),
                                  self.sigma_grid, self.cache, self.cfg.search_tol)
        return self._prelim

    def fits(self):
        if self._fits is None:
            lambdas = dict(self.cfg.lambdas)
            lambdas["theta"] = self.lambda_theta()
            self._fits = cross_fit(self.obs, self.plan, self.cache, self.sigma_grid, lambdas,
                                   self.cfg.tuning, self.cfg.search_tol)
        return self._fits

    def orthogonal_system(self):
        return crossfit_system(self.obs, self.plan, self.fits(), self.cache)

    def first_stage(self):
        """Identity-weighted cross-fitted estimate, shared by both orthogonal estimators."""
        if self._first_stage is None:
            self._first_stage = minimize_gmm(self.orthogonal_system(), None, self.cfg.box,
                                             self.cfg.grid_points, self.cfg.search_tol)
        return self._first_stage


def _ztilde(obs):
    return np.concatenate([obs.x, obs.z], axis=2)


def _from_gmm(report, system, res, W):
    report.sigma, report.alpha = res.theta.sigma, res.theta.alpha
    report.objective = res.objective
    report.n_evals, report.n_failed_points = res.n_evals, res.n_failed
    V, se = asymptotic_se(system, res.theta, W)
    report.vcov, report.se = V.tolist(), tuple(float(v) for v in se)
    report.converged = True


def _preliminary(session, report):
    a = session.preliminary()
    obs = session.obs
    theta = ThetaOne(a.sigma, a.alpha, session.cfg.box)
    system = MomentSystem(_ztilde(obs), obs.x @ a.beta, obs.p, session.cache)
    report.sigma, report.alpha, report.objective = a.sigma, a.alpha, a.objective
    report.n_evals, report.n_failed_points = a.n_evals, a.n_failed
    V, se = asymptotic_se(system, theta)
    report.vcov, report.se = V.tolist(), tuple(float(v) for v in se)
    report.converged = True
    report.extra["lambda_theta"] = a.lam


def _non_orthogonal(session, report):
    a = session.preliminary()
    obs = session.obs
    system = MomentSystem(_ztilde(obs), obs.x @ a.beta, obs.p, session.cache)
    res = minimize_gmm(system, None, session.cfg.box, session.cfg.grid_points, session.cfg.search_tol)
    _from_gmm(report, system, res, None)
    report.extra["lambda_theta"] = a.lam


def _neyman(session, report, optimal):
    system = session.orthogonal_system()
    first = session.first_stage()
    if optimal:
        W = optimal_weight(system, first.theta)
        res = minimize_gmm(system, W, session.cfg.box, session.cfg.grid_points, session.cfg.search_tol)
        _from_gmm(report, system, res, W)
        report.extra["first_stage"] = [first.theta.sigma, first.theta.alpha]
    else:
        _from_gmm(report, system, first, None)
    report.extra["lambdas"] = [f.lambdas for f in session.fits()]
    report.extra["sigma_tilde"] = [f.sigma_tilde for f in session.fits()]


def _oracle(session, report, which):
    truth = session.dataset.truth
    if truth is None:
        raise ValueError("oracle estimators need the true parameters")
    cfg = truth.config
    obs = session.obs
    beta0 = cfg.beta0
    offset = obs.x @ beta0
    if which == 1:
        support = np.flatnonzero(beta0)
        Z = np.concatenate([obs.x[..., support], obs.z], axis=2)
    else:
        Z = obs.z - obs.x @ cfg.Pi0.T
    system = MomentSystem(Z, offset, obs.p, session.cache)
    res = minimize_gmm(system, None, session.cfg.box, session.cfg.grid_points, session.cfg.search_tol)
    _from_gmm(report, system, res, None)


_DISPATCH = {
    EstimatorKind.Preliminary: _preliminary,
    EstimatorKind.NonOrthogonal: _non_orthogonal,
    EstimatorKind.NeymanOrthogonal: lambda s, r: _neyman(s, r, False),
    EstimatorKind.NeymanOrthogonalOpt: lambda s, r: _neyman(s, r, True),
    EstimatorKind.Oracle1: lambda s, r: _oracle(s, r, 1),
    EstimatorKind.Oracle2: lambda s, r: _oracle(s, r, 2),
}


def score(report, theta0, critical_value=1.96):
    """Fill t-statistics and two-sided normal p-values against ``theta0``."""
    t, pv = [], []
    for est, se, true in zip((report.sigma, report.alpha), report.se, theta0):
        if np.isfinite(est) and np.isfinite(se) and se > 0:
            ti = (est - true) / se
            t.append(float(ti))
            pv.append(math.erfc(abs(ti) / math.sqrt(2.0)))
        else:
            t.append(float("nan"))
            pv.append(float("nan"))
    report.tstats, report.pvalues = tuple(t), tuple(pv)
    report.extra["reject"] = [bool(abs(ti) > critical_value) if np.isfinite(ti) else None for ti in t]
    return report


def run_estimator(kind, dataset, cfg=None, session=None):
    """Run one estimator and return its report; errors are recorded, not raised."""
    kind = EstimatorKind.parse(kind)
    session = session or EstimationSession(dataset, cfg)
    report = EstimateReport(estimator=kind.value)
    start = time.perf_counter()
    try:
        _DISPATCH[kind](session, report)
        if not (np.isfinite(report.sigma) and np.isfinite(report.alpha)):
            raise FloatingPointError("non-finite estimate")
    except Exception as exc:  # noqa: BLE001 - a failed estimator must not stop a study
        report.converged = False
        report.error = f"{type(exc).__name__}: {exc}"
        report.extra["traceback"] = traceback.format_exc(limit=5)
    report.elapsed = time.perf_counter() - start
    if dataset.truth is not None:
        score(report, dataset.truth.theta1, session.cfg.critical_value)
    return report


def run_all(dataset, kinds=ALL_ESTIMATORS, cfg=None):
    """Run several estimators on one dataset, sharing a session."""
    session = EstimationSession(dataset, cfg)
    return [run_estimator(k, dataset, session=session) for k in kinds]
