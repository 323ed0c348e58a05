from .conditional import CholResult, conditional, jitter_chol, kzz_cholesky
from .kernels import KernelHyper, rbf_ard
from .likelihoods import (
    Likelihood,
    gaussian_expected_loglik,
    gaussian_loglik,
    gaussian_predictive_loglik,
    robustmax_class_probs,
    robustmax_expected_loglik,
    robustmax_loglik,
)

__all__ = [
    "CholResult",
    "KernelHyper",
    "Likelihood",
    "conditional",
    "gaussian_expected_loglik",
    "gaussian_loglik",
    "gaussian_predictive_loglik",
    "jitter_chol",
    "kzz_cholesky",
    "rbf_ard",
    "robustmax_class_probs",
    "robustmax_expected_loglik",
    "robustmax_loglik",
]
