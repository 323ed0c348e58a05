"""RBF kernel with ARD lengthscales, hyperparameters stored in log space."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from apps.numcore import Tensor, as_tensor, ops
from apps.shared.errors import DimensionError

DEFAULT_LOG_LENGTHSCALE = 0.0
DEFAULT_LOG_SIGNAL_VARIANCE = 0.0


@dataclass
class KernelHyper:
    log_lengthscales: Tensor
    log_signal_variance: Tensor

    @property
    def dim(self) -> int:
        return self.log_lengthscales.shape[0]

    @property
    def signal_variance(self) -> Tensor:
        return ops.exp(self.log_signal_variance)

    @staticmethod
    def init_params(dim: int, prefix: str = "") -> dict[str, np.ndarray]:
        return {
            f"{prefix}log_lengthscales": np.full(dim, DEFAULT_LOG_LENGTHSCALE),
            f"{prefix}log_signal_variance": np.array(DEFAULT_LOG_SIGNAL_VARIANCE),
        }

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], prefix: str = "") -> KernelHyper:
        return cls(
            log_lengthscales=as_tensor(params[f"{prefix}log_lengthscales"]),
            log_signal_variance=as_tensor(params[f"{prefix}log_signal_variance"]),
        )

    @classmethod
    def constant(cls, lengthscales: np.ndarray, signal_variance: float) -> KernelHyper:
        return cls(
            Tensor(np.log(np.asarray(lengthscales, dtype=np.float64))),
            Tensor(np.log(signal_variance)),
        )


def rbf_ard(a: object, b: object, hyper: KernelHyper) -> Tensor:
    """K[i,j] = σ_f² exp(−½ Σ_d (a_id − b_jd)² / ℓ_d²)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != hyper.dim or b.shape[1] != hyper.dim:
        raise DimensionError(
            f"rbf_ard: inputs {a.shape}, {b.shape} do not match {hyper.dim} lengthscales"
        )
    n, m, d = a.shape[0], b.shape[0], hyper.dim
    inv_ls = ops.exp(ops.neg(hyper.log_lengthscales))
    a_scaled = ops.reshape(ops.mul(a, inv_ls), (n, 1, d))
    b_scaled = ops.mul(b, inv_ls)
    # pairwise differences keep K(A,B) == K(B,A)ᵀ bit-for-bit
    diff = ops.sub(ops.expand(a_scaled, (n, m, d)), b_scaled)
    sq_dist = ops.sum(ops.square(diff), axis=2)
    return ops.mul(hyper.signal_variance, ops.exp(ops.mul(-0.5, sq_dist)))


def kernel_diag(a: object, hyper: KernelHyper) -> Tensor:
    """diag K(A, A) = σ_f² for every row."""
    a = as_tensor(a)
    return ops.mul(hyper.signal_variance, np.ones(a.shape[0]))
