from .dsvi import (
    DsviState,
    GaussianVariational,
    dsvi_elbo,
    dsvi_sampler,
    dsvi_train,
    kl_gaussian,
)
from .sghmc import SghmcState, run_chain, sghmc_step
from .titsias import collapsed_bound, exact_log_evidence, exact_posterior_mean, titsias_optimal_q

__all__ = [
    "DsviState",
    "GaussianVariational",
    "SghmcState",
    "collapsed_bound",
    "dsvi_elbo",
    "dsvi_sampler",
    "dsvi_train",
    "exact_log_evidence",
    "exact_posterior_mean",
    "kl_gaussian",
    "run_chain",
    "sghmc_step",
    "titsias_optimal_q",
]
