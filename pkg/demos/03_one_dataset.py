"""
Six estimators on one simulated dataset
=======================================

Draw one panel of 50 markets with 200 characteristics and compare the
preliminary, plug-in, orthogonal and oracle estimates of (sigma, alpha).
Takes about half a minute.
"""

import numpy as np

from hdblp.dgp import DgpConfig, generate_dataset, truth_report
from hdblp.estimators import ALL_ESTIMATORS, EstimationSession, EstimatorConfig, run_estimator

ds = generate_dataset(DgpConfig(seed=7))
print("markets, products, characteristics:", ds.obs.T, ds.obs.J, ds.obs.d_x)
print("truth:", truth_report(ds.truth.config)["theta1"])

# one session shares the share inversions and nuisance fits
session = EstimationSession(ds, EstimatorConfig())
print(f"{'estimator':20s} {'sigma':>7s} {'se':>6s} {'alpha':>7s} {'se':>6s} {'t(sigma)':>9s} {'t(alpha)':>9s}")
for kind in ALL_ESTIMATORS:
    r = run_estimator(kind, ds, session=session)
    print(f"{r.estimator:20s} {r.sigma:7.3f} {r.se[0]:6.3f} {r.alpha:7.3f} {r.se[1]:6.3f}"
          f" {r.tstats[0]:9.2f} {r.tstats[1]:9.2f}")

# the cross-fitted nuisances, fold by fold
for l, fit in enumerate(session.fits()):
    err = np.linalg.norm(fit.beta_hat - ds.truth.config.beta0)
    print(f"fold {l}: sigma_tilde {fit.sigma_tilde:.3f}  ||beta_hat - beta0|| {err:.3f}"
          f"  nonzero {np.count_nonzero(fit.beta_hat)}")
