"""Cross-fitted nuisance estimates.

For every fold ``l`` the fits below use only the markets outside ``I_l``:

* instruments on characteristics, one Lasso per instrument (``Pi_hat``);
* price on characteristics and instruments (``beta_px``, ``beta_pz``);
* Step A: ``min ||g_hat(sigma, alpha, beta)||_inf + lam ||(alpha, beta)||_1``,
  profiled over a sigma grid with the inner problem solved as an LP;
* Step B: Lasso of ``y(sigma_tilde)`` on the predicted price and ``x``.

All regressions pool the ``J`` products of every training market.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .search import profile_minimize
from .shares import InversionCache
from .sparse_reg import (DesignProblem, LinfL1Problem, cross_validate_lambda, default_lambda_grid,
                         fold_labels, lasso, linf_lambda_max)


@dataclass
class FoldPlan:
    """Fold label (0-based) for each market."""

    assignments: np.ndarray

    def __post_init__(self):
        self.assignments = np.asarray(self.assignments, dtype=int)
        L = self.assignments.max() + 1 if self.assignments.size else 0
        if self.assignments.size == 0 or self.assignments.min() < 0:
            raise ValueError("fold labels must be nonnegative and non-empty")
        if np.any(np.bincount(self.assignments, minlength=L) == 0):
            raise ValueError("every fold must contain at least one market")

    @property
    def L(self):
        return int(self.assignments.max()) + 1

    @property
    def T(self):
        return self.assignments.size

    def fold(self, l):
        return np.flatnonzero(self.assignments == l)

    def complement(self, l):
        return np.flatnonzero(self.assignments != l)

    def sizes(self):
        return np.bincount(self.assignments, minlength=self.L)


def make_folds(T, L, mode="paper", seed=0):
    """Split ``T`` markets into ``L`` folds.

    ``mode="paper"`` keeps market order and gives each of the first ``L - 1``
    folds ``T // L`` markets, the remainder going to the last fold (50 markets
    in 6 folds gives sizes 8, 8, 8, 8, 8, 10).  ``mode="shuffle"`` permutes the
    markets with ``seed`` first and then splits as evenly as possible.
    """
    if not 1 <= L <= T:
        raise ValueError(f"need 1 <= L <= T, got L={L}, T={T}")
    if mode == "paper":
        base = T // L
        labels = np.minimum(np.arange(T) // base, L - 1)
    elif mode == "shuffle":
        labels = np.zeros(T, dtype=int) if L == 1 else fold_labels(T, L, seed)
    else:
        raise ValueError(f"unknown fold mode {mode!r}")
    return FoldPlan(labels)


@dataclass
class TuningConfig:
    """How penalties are chosen: ``mode`` is ``"cv"`` or ``"theoretical"``."""

    mode: str = "cv"
    cv_folds: int = 5
    cv_grid_size: int = 20
    cv_grid_ratio: float = 1e-2
    # solver tolerance inside CV paths; the final fit uses the tight default
    cv_tol: float = 1e-7
    seed: int = 0
    # Step A cross-validation
    step_a_grid_size: int = 6
    step_a_grid_ratio: float = 1e-2
    step_a_cv_sigma_points: int = 16
    # theoretical-mode constants and sparsity index
    C_Pi: float = 0.5
    C_p: float = 0.5
    C_theta: float = 0.5
    C_beta: float = 0.5
    d0: int = 5

    def __post_init__(self):
        if self.mode not in ("cv", "theoretical"):
            raise ValueError(f"unknown penalty mode {self.mode!r}")


def theoretical_lambdas(T, d_x, d_ztilde, cfg):
    """Penalty schedules shrinking with the number of training markets ``T``."""
    lx = math.log(max(d_x, T))
    return {
        "Pi": cfg.C_Pi * math.sqrt(cfg.d0 * lx / T),
        "p": cfg.C_p * math.sqrt(lx / T),
        "theta": cfg.C_theta * math.sqrt(math.log(max(d_ztilde, T)) / T),
        "beta": cfg.C_beta * math.sqrt(cfg.d0 * lx / T),
    }


@dataclass
class NuisanceFit:
    """Nuisance estimates from one training sample."""

    Pi_hat: np.ndarray
    beta_px: np.ndarray
    beta_pz: np.ndarray
    sigma_tilde: float
    alpha_tilde: float
    beta_tilde: np.ndarray
    alpha_hat: float
    beta_hat: np.ndarray
    lambdas: dict = field(default_factory=dict)
    train_markets: np.ndarray = None

    def fz(self, x):
        return x @ self.Pi_hat.T

    def fp(self, x, z):
        return x @ self.beta_px + z @ self.beta_pz

    def fu(self, x):
        return x @ self.beta_hat


def _rows(obs, markets):
    markets = np.asarray(markets)
    if markets.size == 0:
        raise ValueError("no training markets")
    x = obs.x[markets].reshape(-1, obs.d_x)
    z = obs.z[markets].reshape(-1, obs.d_z)
    p = obs.p[markets].ravel()
    groups = np.repeat(markets, obs.J)
    return x, z, p, groups


def _fit_lasso(X, Y, groups, lam, tuning, n_markets, key, theory):
    problem = DesignProblem(X, Y, groups=groups)
    if lam is None:
        lam = "cv" if tuning.mode == "cv" else theory[key]
    if lam == "cv":
        grid = default_lambda_grid(problem, tuning.cv_grid_size, tuning.cv_grid_ratio)
        lam = cross_validate_lambda(problem, grid, K=min(tuning.cv_folds, n_markets),
                                    seed=tuning.seed, tol=tuning.cv_tol).lam
    return lasso(problem, float(lam)), float(lam)


def _theory(obs, n_markets, tuning):
    return theoretical_lambdas(n_markets, obs.d_x, obs.d_x + obs.d_z, tuning)


def fit_fz(obs, markets, lam=None, tuning=None):
    """Lasso of each instrument on ``x``; returns ``(Pi_hat, lambdas)``."""
    tuning = tuning or TuningConfig()
    x, z, _, groups = _rows(obs, markets)
    theory = _theory(obs, len(markets), tuning)
    Pi = np.zeros((obs.d_z, obs.d_x))
    lams = []
    for i in range(obs.d_z):
        sol, used = _fit_lasso(x, z[:, i], groups, lam, tuning, len(markets), "Pi", theory)
        Pi[i] = sol.coef
        lams.append(used)
    return Pi, lams


def fit_fp(obs, markets, lam=None, tuning=None):
    """Lasso of price on ``(x, z)``; returns ``(beta_px, beta_pz, lambda)``."""
    tuning = tuning or TuningConfig()
    x, z, p, groups = _rows(obs, markets)
    theory = _theory(obs, len(markets), tuning)
    sol, used = _fit_lasso(np.hstack([x, z]), p, groups, lam, tuning, len(markets), "p", theory)
    return sol.coef[:obs.d_x], sol.coef[obs.d_x:], used


@dataclass
class StepAResult:
    sigma: float
    alpha: float
    beta: np.ndarray
    objective: float
    lam: float
    n_evals: int = 0
    n_failed: int = 0


class _StepAMoments:
    """Pieces of ``g_hat(theta) = c(sigma) - B (alpha, beta')'`` over some markets."""

    def __init__(self, obs, markets, cache):
        x, z, p, _ = _rows(obs, markets)
        self.markets = np.asarray(markets)
        self.cache = cache
        self.Zt = np.hstack([x, z])
        n = self.Zt.shape[0]
        self.B = self.Zt.T @ np.column_stack([p, x]) / n
        self.n = n

    def c(self, sigma):
        y = self.cache(sigma)[self.markets].ravel()
        return self.Zt.T @ y / self.n


def _profile_step_a(moments, problem, lam, sigma_grid, refine, tol):
    def value(sigma):
        sol = problem.solve(moments.c(sigma), lam)
        return sol.objective, sol.gamma

    res = profile_minimize(value, sigma_grid, tol=tol, refine=refine)
    return res


def step_a(obs, markets, lam, sigma_grid, cache, tol=1e-6):
    """Profiled l_inf + l_1 minimum-distance fit on the given markets.

    For each sigma the inner problem in ``(alpha, beta)`` is convex and solved
    exactly, so the only search is the one-dimensional profile over sigma.
    """
    moments = _StepAMoments(obs, markets, cache)
    problem = LinfL1Problem(moments.B)
    res = _profile_step_a(moments, problem, lam, sigma_grid, True, tol)
    gamma = res.payload
    return StepAResult(sigma=res.x, alpha=float(gamma[0]), beta=gamma[1:], objective=res.value,
                       lam=float(lam), n_evals=res.n_evals, n_failed=res.n_failed)


def step_a_lambda_grid(obs, markets, cache, tuning):
    B = _StepAMoments(obs, markets, cache).B
    return linf_lambda_max(B) * np.geomspace(1.0, tuning.step_a_grid_ratio, tuning.step_a_grid_size)


@dataclass
class StepACV:
    lam: float
    grid: np.ndarray
    cv_error: np.ndarray


def cross_validate_step_a(obs, markets, cache, sigma_bounds=(0.0, 3.0), tuning=None, grid=None):
    """Choose the Step A penalty by K-fold CV over markets.

    Each candidate is fit on the training markets (sigma profiled on a coarse
    grid) and scored by the sup-norm of the held-out moment vector.
    """
    tuning = tuning or TuningConfig()
    markets = np.asarray(markets)
    if grid is None:
        grid = step_a_lambda_grid(obs, markets, cache, tuning)
    grid = np.sort(np.asarray(grid, dtype=float))[::-1]
    sig_grid = np.linspace(*sigma_bounds, tuning.step_a_cv_sigma_points)
    K = min(tuning.cv_folds, markets.size)
    labels = fold_labels(markets.size, K, tuning.seed)
    errors = np.empty((K, grid.size))
    for k in range(K):
        train = _StepAMoments(obs, markets[labels != k], cache)
        val = _StepAMoments(obs, markets[labels == k], cache)
        problem = LinfL1Problem(train.B)
        for i, lam in enumerate(grid):
            res = _profile_step_a(train, problem, lam, sig_grid, False, 1e-6)
            errors[k, i] = np.abs(val.c(res.x) - val.B @ res.payload).max()
    cv = errors.mean(axis=0)
    best = np.flatnonzero(cv <= cv.min())
    return StepACV(lam=float(grid[best].max()), grid=grid, cv_error=cv)


def step_b(obs, markets, sigma_tilde, beta_px, beta_pz, cache, lam=None, tuning=None):
    """Lasso of ``y(sigma_tilde)`` on ``(predicted price, x)``; returns ``(alpha_hat, beta_hat, lambda)``."""
    tuning = tuning or TuningConfig()
    x, z, _, groups = _rows(obs, markets)
    y = cache(sigma_tilde)[np.asarray(markets)].ravel()
    p_hat = x @ beta_px + z @ beta_pz
    theory = _theory(obs, len(markets), tuning)
    sol, used = _fit_lasso(np.column_stack([p_hat, x]), y, groups, lam, tuning, len(markets),
                           "beta", theory)
    return float(sol.coef[0]), sol.coef[1:], used


def fit_nuisance(obs, markets, cache, sigma_grid, lambdas=None, tuning=None, tol=1e-6):
    """All nuisance fits on one training sample.

    ``lambdas`` may fix any of ``"Pi"``, ``"p"``, ``"theta"``, ``"beta"``
    (a number or ``"cv"``); missing entries follow ``tuning.mode``.
    """
    tuning = tuning or TuningConfig()
    lambdas = dict(lambdas or {})
    markets = np.asarray(markets)
    Pi, lam_pi = fit_fz(obs, markets, lambdas.get("Pi"), tuning)
    bpx, bpz, lam_p = fit_fp(obs, markets, lambdas.get("p"), tuning)
    lam_theta = lambdas.get("theta")
    if lam_theta is None:
        lam_theta = "cv" if tuning.mode == "cv" else _theory(obs, markets.size, tuning)["theta"]
    if lam_theta == "cv":
        lam_theta = cross_validate_step_a(obs, markets, cache, (sigma_grid[0], sigma_grid[-1]),
                                          tuning).lam
    a = step_a(obs, markets, lam_theta, sigma_grid, cache, tol)
    alpha_hat, beta_hat, lam_b = step_b(obs, markets, a.sigma, bpx, bpz, cache, lambdas.get("beta"),
                                        tuning)
    return NuisanceFit(Pi_hat=Pi, beta_px=bpx, beta_pz=bpz, sigma_tilde=a.sigma,
                       alpha_tilde=a.alpha, beta_tilde=a.beta, alpha_hat=alpha_hat,
                       beta_hat=beta_hat,
                       lambdas={"Pi": lam_pi, "p": lam_p, "theta": float(lam_theta), "beta": lam_b},
                       train_markets=markets)


def cross_fit(obs, plan, cache, sigma_grid, lambdas=None, tuning=None, tol=1e-6):
    """One :class:`NuisanceFit` per fold, each trained on that fold's complement."""
    if plan.T != obs.T:
        raise ValueError("fold plan and data disagree on the number of markets")
    fits = []
    for l in range(plan.L):
        comp = plan.complement(l)
        if comp.size == 0:
            raise ValueError(f"fold {l} has an empty complement")
        fits.append(fit_nuisance(obs, comp, cache, sigma_grid, lambdas, tuning, tol))
    return fits


def make_cache(obs, quad, tol=1e-12, max_iter=1000):
    return InversionCache(obs.s, obs.p, quad, tol, max_iter)
