"""Orthogonal GMM for random-coefficient logit demand with many product characteristics."""

from .dgp import DgpConfig, Dataset, Observables, generate_dataset, read_csv, truth_report, write_csv
from .estimators import EstimationSession, EstimatorConfig, EstimatorKind, run_all, run_estimator
from .nuisance import FoldPlan, NuisanceFit, TuningConfig, cross_fit, fit_nuisance, make_folds
from .orthogonal import Box, EstimateReport, MomentSystem, ThetaOne, asymptotic_se, minimize_gmm
from .shares import (DEFAULT_QUADRATURE, InversionError, QuadratureRule, compute_shares, dy_dsigma,
                     invert_shares, share_derivative_sigma, share_jacobian_y)
from .sparse_reg import (DesignProblem, SolverError, cross_validate_lambda, lasso, linf_l1_solve)
from .study import StudyConfig, emit_outputs, load_config, run_study, summarize

__version__ = "0.1.0"
