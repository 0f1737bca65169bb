"""
Sparse regression building blocks
=================================

Coordinate-descent Lasso with market-grouped cross-validation, and the
sup-norm plus l1 program behind the preliminary fit.
"""

import numpy as np

from hdblp.sparse_reg import (DesignProblem, cross_validate_lambda, default_lambda_grid, lasso,
                              linf_l1_objective, linf_l1_solve)

rng = np.random.default_rng(1)

# 50 markets of 4 products, 200 regressors, 4 of them active
n_markets, J, d = 50, 4, 200
X = rng.normal(size=(n_markets * J, d))
beta = np.zeros(d)
beta[:4] = [2.0, 0.5, 0.22, 0.125]
Y = X @ beta + rng.normal(size=n_markets * J)
groups = np.repeat(np.arange(n_markets), J)
prob = DesignProblem(X, Y, groups=groups)

# folds never split a market
cv = cross_validate_lambda(prob, default_lambda_grid(prob, 20), K=5, seed=0)
print("lambda chosen by CV:", round(cv.lam, 4))
fit = lasso(prob, cv.lam)
print("nonzero coefficients:", np.flatnonzero(fit.coef)[:10], "...")
print("first four:", np.round(fit.coef[:4], 3))
print("KKT violation:", f"{fit.kkt_violation:.1e}")

# at lambda = 0 the Lasso is least squares
small = DesignProblem(X[:, :6], Y)
print("lambda=0 vs lstsq:", np.abs(lasso(small, 0.0).coef - np.linalg.lstsq(X[:, :6], Y, rcond=None)[0]).max())

# min ||c - B g||_inf + lam ||g||_1
B = rng.normal(size=(8, 3))
c = B @ np.array([1.0, 0.0, -0.5]) + 0.05 * rng.normal(size=8)
for lam in (0.0, 0.1, 1.0, 10.0):
    sol = linf_l1_solve(B, c, lam)
    print(f"lam={lam:5.1f} gamma={np.round(sol.gamma, 3)} objective={sol.objective:.4f} gap={sol.gap:.1e}")

# a grid search with step 0.1 can only come close to the exact LP value
axis = np.linspace(-2, 2, 41)
G = np.stack(np.meshgrid(axis, axis, axis), -1).reshape(-1, 3)
vals = [linf_l1_objective(B, c, g, 0.1) for g in G]
print("grid best:", round(min(vals), 4), " LP:", round(linf_l1_solve(B, c, 0.1).objective, 4))
