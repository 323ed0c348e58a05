"""Closed-form single-layer sparse-GP quantities at fixed hyperparameters."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from apps.gpcore import KernelHyper, jitter_chol, rbf_ard
from apps.gpcore.likelihoods import LOG_2PI


def _columns(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y.reshape(-1, 1) if y.ndim == 1 else y


def _kzz(z: np.ndarray, hyper: KernelHyper) -> np.ndarray:
    """K_ZZ with the same jitter the sparse conditional applies."""
    kzz = rbf_ard(z, z, hyper)
    return kzz.value + jitter_chol(kzz).jitter * np.eye(len(z))


def titsias_optimal_q(
    x: np.ndarray, y: np.ndarray, z: np.ndarray, hyper: KernelHyper, noise_var: float
) -> tuple[np.ndarray, np.ndarray]:
    """
    Optimal Gaussian q(u) = N(m*, S*) for a single-layer GP with Gaussian noise.

    S* = K_ZZ A⁻¹ K_ZZ and m* = ν⁻² K_ZZ A⁻¹ K_ZX y with A = K_ZZ + ν⁻² K_ZX K_XZ.
    """
    y = _columns(y)
    kzz = _kzz(z, hyper)
    kzx = rbf_ard(z, x, hyper).value
    a = kzz + kzx @ kzx.T / noise_var
    factor = linalg.cho_factor(a, lower=True)
    s_star = kzz @ linalg.cho_solve(factor, kzz)
    m_star = kzz @ linalg.cho_solve(factor, kzx @ y) / noise_var
    return m_star, 0.5 * (s_star + s_star.T)


def collapsed_bound(
    x: np.ndarray, y: np.ndarray, z: np.ndarray, hyper: KernelHyper, noise_var: float
) -> float:
    """log N(y | 0, Q_XX + ν²I) − tr(K_XX − Q_XX) / (2ν²), summed over columns of y."""
    y = _columns(y)
    n, columns = y.shape
    kzz = _kzz(z, hyper)
    kzx = rbf_ard(z, x, hyper).value
    qxx = kzx.T @ linalg.cho_solve(linalg.cho_factor(kzz, lower=True), kzx)
    log_marginal = _log_normal(y, qxx + noise_var * np.eye(n))
    trace = np.trace(rbf_ard(x, x, hyper).value - qxx)
    return float(log_marginal - columns * trace / (2.0 * noise_var))


def exact_log_evidence(x: np.ndarray, y: np.ndarray, hyper: KernelHyper, noise_var: float) -> float:
    y = _columns(y)
    n = y.shape[0]
    return float(_log_normal(y, rbf_ard(x, x, hyper).value + noise_var * np.eye(n)))


def exact_posterior_mean(
    x: np.ndarray, y: np.ndarray, x_star: np.ndarray, hyper: KernelHyper, noise_var: float
) -> np.ndarray:
    y = _columns(y)
    k = rbf_ard(x, x, hyper).value + noise_var * np.eye(len(x))
    return rbf_ard(x_star, x, hyper).value @ linalg.cho_solve(linalg.cho_factor(k, lower=True), y)


def _log_normal(y: np.ndarray, cov: np.ndarray) -> float:
    n, columns = y.shape
    chol = linalg.cholesky(cov, lower=True)
    alpha = linalg.solve_triangular(chol, y, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * np.sum(alpha**2) - 0.5 * columns * (log_det + n * LOG_2PI))
