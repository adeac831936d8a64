"""De-biased inference for high-dimensional linear expectile regression."""

__version__ = "0.1.0"

from .distributions import RngStream, chi2_quantile, chi2_tail, normal_cdf, normal_quantile
from .expectile import Dataset, expectile_loss_scalar, loss_and_gradient, scalar_expectile, squared_weights
from .inference import DebiasResult, WaldTest, confidence_intervals, debias, delta_diagnostics, wald_test
from .nodewise import PrecisionEstimate, nodewise_precision, relaxation_diagnostic
from .regularizers import Regularizer, lasso, scad
from .simulation import StudyConfig, StudyResult, gen_replicate, make_sigma, run_study
from .solver import (
    ExpectileFit,
    SolverOptions,
    cross_validate,
    fit_penalized_als,
    irls_unpenalized,
    project_l1_ball,
)

__all__ = [
    "__version__",
    "RngStream",
    "chi2_quantile",
    "chi2_tail",
    "normal_cdf",
    "normal_quantile",
    "Dataset",
    "expectile_loss_scalar",
    "loss_and_gradient",
    "scalar_expectile",
    "squared_weights",
    "Regularizer",
    "lasso",
    "scad",
    "SolverOptions",
    "ExpectileFit",
    "fit_penalized_als",
    "irls_unpenalized",
    "project_l1_ball",
    "cross_validate",
    "PrecisionEstimate",
    "nodewise_precision",
    "relaxation_diagnostic",
    "DebiasResult",
    "WaldTest",
    "debias",
    "wald_test",
    "confidence_intervals",
    "delta_diagnostics",
    "StudyConfig",
    "StudyResult",
    "make_sigma",
    "gen_replicate",
    "run_study",
]
