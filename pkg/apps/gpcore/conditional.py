"""
Sparse-GP conditional p(f | u) evaluated through a jittered Cholesky of K_ZZ.

Only marginal variances are returned; the doubly stochastic sampler never needs the
full n×n covariance.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import structlog
from scipy import linalg

from apps.numcore import Tensor, as_tensor, ops
from apps.numcore.linalg import cholesky, tri_solve
from apps.shared.errors import NotPositiveDefiniteError

from .kernels import KernelHyper, kernel_diag, rbf_ard

JITTER_LEVELS = (1e-8, 1e-6, 1e-4)
CLAMP_WARN = 1e-6

logger = structlog.get_logger(__name__)


class CholResult(NamedTuple):
    factor: Tensor
    jitter: float


def jitter_chol(k: Tensor) -> CholResult:
    """Factor K + jitter·I, escalating jitter until the factorization succeeds."""
    k = as_tensor(k)
    size = k.shape[0]
    scale = abs(float(np.mean(np.diag(k.value)))) or 1.0
    for level in JITTER_LEVELS:
        jitter = level * scale
        try:
            linalg.cholesky(k.value + jitter * np.eye(size), lower=True)
        except (linalg.LinAlgError, ValueError):
            continue
        if level != JITTER_LEVELS[0]:
            logger.warning("jitter_escalated", jitter=jitter, size=size)
        return CholResult(cholesky(ops.add(k, jitter * np.eye(size))), jitter)
    raise NotPositiveDefiniteError(
        f"matrix of size {size} is not positive definite at jitter {JITTER_LEVELS[-1]}·{scale:g}"
    )


def kzz_cholesky(z: object, hyper: KernelHyper) -> CholResult:
    return jitter_chol(rbf_ard(z, z, hyper))


def conditional(
    f_in: object,
    z: object,
    u: object,
    hyper: KernelHyper,
    chol: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Mean K_XZ K_ZZ⁻¹ U and marginal variance diag(K_XX − Q_XX), clamped at 0."""
    f_in, z, u = as_tensor(f_in), as_tensor(z), as_tensor(u)
    if chol is None:
        chol = kzz_cholesky(z, hyper).factor
    k_zx = rbf_ard(z, f_in, hyper)
    a = tri_solve(chol, k_zx)
    mean = ops.matmul(ops.transpose(a), tri_solve(chol, u))
    var = ops.sub(kernel_diag(f_in, hyper), ops.sum(ops.square(a), axis=0))
    lowest = float(np.min(var.value)) if var.value.size else 0.0
    if lowest < -CLAMP_WARN:
        logger.warning("variance_clamped", min_variance=lowest)
    return mean, ops.clamp_min(var, 0.0)
