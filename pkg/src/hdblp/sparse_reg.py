"""Penalized regression solvers.

* ``lasso``: cyclic coordinate descent on ``(1/n)||Y - X b||^2 + lam ||b||_1``.
* ``cross_validate_lambda``: K-fold choice of the Lasso penalty.
* ``linf_l1_solve``: ``min_g ||c - B g||_inf + lam ||g||_1`` as a linear program.

No column is standardized or left unpenalized unless asked for.
"""

from dataclasses import dataclass, field
from functools import cached_property

import highspy
import numba
import numpy as np


class SolverError(RuntimeError):
    """Raised when a solver returns an uncertified or infeasible answer."""


@dataclass
class DesignProblem:
    """Regressors ``X`` (n x d), response ``Y`` (n,), optional row weights and CV groups."""

    X: np.ndarray
    Y: np.ndarray
    weights: np.ndarray = None
    groups: np.ndarray = None

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float).ravel()
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise ValueError("X must be a non-empty 2-D array")
        if self.Y.size != self.X.shape[0]:
            raise ValueError(f"Y has {self.Y.size} rows but X has {self.X.shape[0]}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ValueError("design contains non-finite entries")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float).ravel()
            if self.weights.size != self.n or np.any(self.weights < 0) or self.weights.sum() <= 0:
                raise ValueError("weights must be nonnegative, one per row, not all zero")
        if self.groups is not None:
            self.groups = np.asarray(self.groups).ravel()
            if self.groups.size != self.n:
                raise ValueError("groups must have one label per row")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @cached_property
    def gram(self):
        """``(X'WX/sum W, X'WY/sum W, Y'WY/sum W)``."""
        if self.weights is None:
            w = np.full(self.n, 1.0 / self.n)
        else:
            w = self.weights / self.weights.sum()
        Xw = self.X * w[:, None]
        return Xw.T @ self.X, Xw.T @ self.Y, float(np.dot(w * self.Y, self.Y))

    def subset(self, rows):
        return DesignProblem(self.X[rows], self.Y[rows],
                             None if self.weights is None else self.weights[rows],
                             None if self.groups is None else self.groups[rows])

    def lambda_max(self):
        """Smallest penalty at which the zero vector solves the Lasso."""
        _, q, _ = self.gram
        return 2.0 * float(np.abs(q).max())


@dataclass
class LassoSolution:
    coef: np.ndarray
    lam: float
    objective: float
    kkt_violation: float
    n_sweeps: int = 0
    history: np.ndarray = field(default=None, repr=False)

    def predict(self, X):
        return np.asarray(X) @ self.coef


@numba.njit(cache=True)
def _cd_sweeps(G, q, lam, beta, tol, max_sweeps, history, start):
    d = G.shape[0]
    Gb = np.zeros(d)
    for i in range(d):
        acc = 0.0
        for k in range(d):
            acc += G[i, k] * beta[k]
        Gb[i] = acc
    half = 0.5 * lam
    sweeps = 0
    active_only = False
    while sweeps < max_sweeps:
        max_change = 0.0
        for j in range(d):
            bj = beta[j]
            if active_only and bj == 0.0:
                continue
            gjj = G[j, j]
            if gjj <= 0.0:
                new = 0.0
            else:
                a = q[j] - Gb[j] + gjj * bj
                if a > half:
                    new = (a - half) / gjj
                elif a < -half:
                    new = (a + half) / gjj
                else:
                    new = 0.0
            delta = new - bj
            if delta != 0.0:
                for k in range(d):
                    Gb[k] += G[j, k] * delta
                beta[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
        obj = 0.0
        for k in range(d):
            obj += beta[k] * Gb[k] - 2.0 * q[k] * beta[k] + lam * abs(beta[k])
        if start + sweeps < history.size:
            history[start + sweeps] = obj
        sweeps += 1
        if max_change < tol:
            if active_only:
                active_only = False
            else:
                break
        elif not active_only:
            active_only = True
    return sweeps


def _kkt(G, q, beta, lam):
    grad = 2.0 * (q - G @ beta)
    zero = beta == 0
    viol = np.where(zero, np.maximum(np.abs(grad) - lam, 0.0), np.abs(grad - lam * np.sign(beta)))
    return float(viol.max()) if viol.size else 0.0


def kkt_violation(X, Y, coef, lam):
    """Largest subgradient-condition violation computed from the raw design."""
    X = np.asarray(X, dtype=float)
    grad = 2.0 / X.shape[0] * X.T @ (np.asarray(Y, dtype=float) - X @ coef)
    zero = coef == 0
    viol = np.where(zero, np.maximum(np.abs(grad) - lam, 0.0), np.abs(grad - lam * np.sign(coef)))
    return float(viol.max())


def lasso(problem, lam, tol=1e-9, max_sweeps=20000, warm_start=None, standardize=False,
          track=False):
    """Solve ``min_b (1/n)||Y - X b||_2^2 + lam ||b||_1`` by coordinate descent.

    Iterates until the largest coefficient change in a full sweep is below
    ``tol`` and the KKT violation is at most ``tol``.  With ``track=True`` the
    objective after every sweep is stored in ``history``.
    """
    if lam < 0 or not np.isfinite(lam):
        raise ValueError("lam must be a nonnegative finite number")
    if tol <= 0:
        raise ValueError("tol must be positive")
    G, q, yy = problem.gram
    scale = None
    if standardize:
        scale = np.sqrt(np.diag(G)).copy()
        scale[scale == 0] = 1.0
        G = G / np.outer(scale, scale)
        q = q / scale
    d = G.shape[0]
    beta = np.zeros(d) if warm_start is None else np.array(warm_start, dtype=float)
    if scale is not None and warm_start is not None:
        beta = beta * scale
    history = np.full(max_sweeps if track else 0, np.nan)

    sweeps = 0
    inner_tol = tol
    while True:
        sweeps += _cd_sweeps(G, q, float(lam), beta, inner_tol, max_sweeps - sweeps, history, sweeps)
        viol = _kkt(G, q, beta, lam)
        if viol <= tol or sweeps >= max_sweeps or inner_tol < 1e-15:
            break
        inner_tol *= 0.1

    coef = beta / scale if scale is not None else beta
    resid_part = float(beta @ G @ beta - 2.0 * q @ beta + yy)
    objective = resid_part + lam * float(np.abs(beta).sum())
    hist = history[:sweeps] + yy if track else None
    return LassoSolution(coef=coef, lam=float(lam), objective=objective, kkt_violation=viol,
                         n_sweeps=sweeps, history=hist)


def lasso_path(problem, grid, tol=1e-9, standardize=False):
    """Lasso solutions over ``grid``, warm-started from the largest penalty down.

    Returned in the order of ``grid``.
    """
    grid = np.asarray(grid, dtype=float)
    order = np.argsort(-grid, kind="stable")
    sols = [None] * grid.size
    beta = None
    for i in order:
        sol = lasso(problem, grid[i], tol=tol, warm_start=beta, standardize=standardize)
        beta = sol.coef
        sols[i] = sol
    return sols


def default_lambda_grid(problem, n=20, ratio=1e-2):
    """Geometric grid from ``lambda_max`` down to ``ratio * lambda_max``."""
    lmax = problem.lambda_max()
    if lmax <= 0:
        lmax = 1.0
    return lmax * np.geomspace(1.0, ratio, n)


def fold_labels(n_units, K, seed):
    """Seeded shuffle of ``range(n_units)`` split contiguously into K folds."""
    if K < 2:
        raise ValueError("need at least two folds")
    if n_units < K:
        raise ValueError(f"cannot split {n_units} units into {K} folds")
    perm = np.random.default_rng(seed).permutation(n_units)
    labels = np.empty(n_units, dtype=int)
    for k, chunk in enumerate(np.array_split(perm, K)):
        labels[chunk] = k
    return labels


@dataclass
class CVResult:
    lam: float
    grid: np.ndarray
    cv_error: np.ndarray
    fold_errors: np.ndarray = field(repr=False, default=None)


def cross_validate_lambda(problem, grid=None, K=5, seed=0, tol=1e-9, standardize=False):
    """Pick the penalty with the smallest mean held-out squared error.

    Rows are folded together by ``problem.groups`` when given (one market
    never straddles folds).  Exact ties go to the larger penalty.
    """
    if grid is None:
        grid = default_lambda_grid(problem)
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("grid must be non-empty and strictly positive")
    if problem.groups is None:
        units = np.arange(problem.n)
        row_unit = units
    else:
        units, row_unit = np.unique(problem.groups, return_inverse=True)
    labels = fold_labels(len(units), K, seed)[row_unit]

    errors = np.empty((K, grid.size))
    for k in range(K):
        test = labels == k
        train = problem.subset(~test)
        for i, sol in enumerate(lasso_path(train, grid, tol=tol, standardize=standardize)):
            resid = problem.Y[test] - problem.X[test] @ sol.coef
            errors[k, i] = np.mean(resid ** 2)
    cv = errors.mean(axis=0)
    best = np.flatnonzero(cv <= cv.min())
    lam = float(grid[best[np.argmax(grid[best])]])
    return CVResult(lam=lam, grid=grid, cv_error=cv, fold_errors=errors)


@dataclass
class LinfL1Solution:
    gamma: np.ndarray
    objective: float
    dual_objective: float
    gap: float
    iterations: int = 0


def linf_l1_objective(B, c, gamma, lam):
    return float(np.abs(c - B @ gamma).max() + lam * np.abs(gamma).sum())


def linf_lambda_max(B):
    """A penalty above which ``gamma = 0`` is optimal for every ``c``."""
    return float(np.abs(B).max())


class LinfL1Problem:
    """``min_g ||c - B g||_inf + lam ||g||_1`` with ``B`` fixed across solves.

    The LP has variables ``t >= 0`` and ``g = g_plus - g_minus`` with
    ``g_plus, g_minus >= 0`` and rows ``t + B g >= c``, ``-t + B g <= c``.
    Only the row bounds (``c``) and costs (``lam``) change between calls, so
    HiGHS re-solves from the previous optimal basis.
    """

    def __init__(self, B):
        B = np.asarray(B, dtype=float)
        if B.ndim != 2:
            raise ValueError("B must be a matrix")
        if not np.all(np.isfinite(B)):
            raise ValueError("B contains non-finite entries")
        self.B = B
        self.m, self.d = B.shape
        self._lam = None
        self._h = highspy.Highs()
        self._h.setOptionValue("output_flag", False)
        self._h.setOptionValue("threads", 1)
        self._h.setOptionValue("primal_feasibility_tolerance", 1e-10)
        self._h.setOptionValue("dual_feasibility_tolerance", 1e-10)
        inf = highspy.kHighsInf
        m, d = self.m, self.d
        ones = np.ones((m, 1))
        A = np.block([[ones, B, -B], [-ones, B, -B]])
        lp = highspy.HighsLp()
        lp.num_col_ = 1 + 2 * d
        lp.num_row_ = 2 * m
        lp.col_cost_ = np.r_[1.0, np.zeros(2 * d)]
        lp.col_lower_ = np.zeros(1 + 2 * d)
        lp.col_upper_ = np.full(1 + 2 * d, inf)
        lp.row_lower_ = np.r_[np.zeros(m), np.full(m, -inf)]
        lp.row_upper_ = np.r_[np.full(m, inf), np.zeros(m)]
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        cols = A.T
        nz = cols != 0
        lp.a_matrix_.start_ = np.r_[0, np.cumsum(nz.sum(axis=1))].astype(np.int32)
        lp.a_matrix_.index_ = np.nonzero(nz)[1].astype(np.int32)
        lp.a_matrix_.value_ = cols[nz]
        self._h.passModel(lp)
        self._rows = np.arange(2 * m, dtype=np.int32)
        self._gcols = np.arange(1, 1 + 2 * d, dtype=np.int32)

    def solve(self, c, lam):
        c = np.asarray(c, dtype=float).ravel()
        if c.size != self.m:
            raise ValueError(f"c has length {c.size}, expected {self.m}")
        if lam < 0 or not np.all(np.isfinite(c)):
            raise ValueError("need lam >= 0 and finite c")
        h = self._h
        inf = highspy.kHighsInf
        if self._lam != lam:
            h.changeColsCost(2 * self.d, self._gcols, np.full(2 * self.d, float(lam)))
            self._lam = lam
        h.changeRowsBounds(2 * self.m, self._rows, np.r_[c, np.full(self.m, -inf)],
                           np.r_[np.full(self.m, inf), c])
        sol = self._run()
        if sol.gap > 1e-8 * (1.0 + abs(sol.objective)):
            h.clearSolver()
            sol = self._run()
        if sol.gap > 1e-8 * (1.0 + abs(sol.objective)):
            raise SolverError(f"duality gap {sol.gap:.2e} exceeds tolerance")
        return sol

    def _run(self):
        h = self._h
        h.run()
        status = h.getModelStatus()
        if status != highspy.HighsModelStatus.kOptimal:
            raise SolverError(f"LP solver returned {h.modelStatusToString(status)}")
        x = np.asarray(h.getSolution().col_value)
        gamma = x[1:1 + self.d] - x[1 + self.d:]
        row_dual = np.asarray(h.getSolution().row_dual)
        c = np.asarray(h.getLp().row_lower_)[: self.m]
        lam = self._lam
        primal = linf_l1_objective(self.B, c, gamma, lam)
        dual = self._dual_value(row_dual[: self.m] + row_dual[self.m:], c, lam)
        return LinfL1Solution(gamma=gamma, objective=primal, dual_objective=dual,
                              gap=max(primal - dual, 0.0),
                              iterations=int(h.getInfo().simplex_iteration_count))

    def _dual_value(self, w, c, lam):
        # dual: max c'w  s.t. ||w||_1 <= 1, ||B'w||_inf <= lam; rescale into feasibility
        # the B'w constraint is checked to 1e-9 relative, so tiny lam does not blow up the scale
        bw = np.abs(self.B.T @ w).max() if self.d else 0.0
        allowance = max(lam, 1e-9 * max(1.0, float(np.abs(self.B).max())))
        scale = max(np.abs(w).sum(), 1.0, bw / allowance)
        return float(c @ w) / scale


def linf_l1_solve(B, c, lam):
    """One-off solve of ``min_g ||c - B g||_inf + lam ||g||_1``."""
    B = np.asarray(B, dtype=float)
    c = np.asarray(c, dtype=float).ravel()
    if B.ndim != 2 or B.shape[0] != c.size:
        raise ValueError(f"B {B.shape} and c ({c.size},) do not conform")
    return LinfL1Problem(B).solve(c, lam)
