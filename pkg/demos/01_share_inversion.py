"""
Shares and their inversion
==========================

Random-coefficient logit shares on a 21-node Gauss-Hermite rule, and the
recovery of mean utilities from observed shares.
"""

import time

import numpy as np

from hdblp.shares import (DEFAULT_QUADRATURE, compute_shares, contraction_map, dy_dsigma, invert_shares,
                          share_jacobian_y)

rng = np.random.default_rng(0)

# one market with four products
y = np.array([0.5, -0.2, 1.0, 0.1])
p = np.array([1.0, 2.0, 0.5, 1.5])
s = compute_shares(y, p, 1.0)
print("shares at sigma=1:", np.round(s, 4), " outside:", round(1 - s.sum(), 4))

# sigma=0 is the plain logit
e = np.exp(y)
print("sigma=0 vs logit:", np.abs(compute_shares(y, p, 0.0) - e / (1 + e.sum())).max())

# the map x -> x + log s - log f_s(x) shrinks distances
a, b = y + rng.normal(size=4), y + rng.normal(size=4)
ratio = np.abs(contraction_map(a, s, p, 1.0) - contraction_map(b, s, p, 1.0)).max() / np.abs(a - b).max()
print("contraction ratio on a random pair:", round(ratio, 4))

# plain contraction vs the Newton hybrid
for method in ("contraction", "hybrid"):
    y_hat, info = invert_shares(s, p, 1.0, method=method, full_output=True)
    print(f"{method:12s} iterations {info.iterations:4d}  error {np.abs(y_hat - y).max():.1e}")

# a market with a tiny outside share; contraction alone needs thousands of steps
s_hard = np.array([0.78379896, 0.08385075, 0.07002509, 0.05525966])
p_hard = np.array([-4.48908747, 5.1115636, 4.43341352, 5.39953218])
_, info = invert_shares(s_hard, p_hard, 3.0, full_output=True)
print("hard market: hybrid iterations", info.iterations)

# derivatives: share Jacobian in y and dy/dsigma by implicit differentiation
print("share Jacobian:\n", np.round(share_jacobian_y(y, p, 1.0), 4))
print("dy/dsigma:", np.round(dy_dsigma(s, p, 1.0), 4))

# many markets at once
Y = rng.uniform(-3, 3, (1000, 4))
P = rng.uniform(-3, 3, (1000, 4))
S = compute_shares(Y, P, 1.5)
start = time.perf_counter()
err = np.abs(invert_shares(S, P, 1.5) - Y).max()
print(f"1000 markets batched: {time.perf_counter() - start:.2f}s, max error {err:.1e}")
print("quadrature nodes:", len(DEFAULT_QUADRATURE))
