from .mixture import (
    MixturePosterior,
    bayes_posterior,
    build_ground_truth,
    estimate_jsd,
    grad_log_posterior,
    mll_metric,
    modes_found,
    sample_prior,
    true_pdf,
)
from .problem import MixtureProblem
from .sweep import (
    CAPACITY_LEVELS,
    SWEEP_HEADER,
    SweepRow,
    ipvi_samples,
    parse_sweep_spec,
    run_sweep,
    sghmc_samples,
)

__all__ = [
    "CAPACITY_LEVELS",
    "MixturePosterior",
    "MixtureProblem",
    "SWEEP_HEADER",
    "SweepRow",
    "bayes_posterior",
    "build_ground_truth",
    "estimate_jsd",
    "grad_log_posterior",
    "ipvi_samples",
    "mll_metric",
    "modes_found",
    "parse_sweep_spec",
    "run_sweep",
    "sample_prior",
    "sghmc_samples",
    "true_pdf",
]
