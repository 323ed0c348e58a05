"""Observation likelihoods: Gaussian regression and robust-max multiclass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from apps.numcore import Tensor, as_tensor, ops
from apps.shared.errors import ConfigError, ContractError

LOG_2PI = float(np.log(2.0 * np.pi))
DEFAULT_LOG_NOISE_VARIANCE = float(np.log(0.1))
DEFAULT_ROBUSTMAX_EPS = 1e-3
QUADRATURE_POINTS = 20


@dataclass(frozen=True)
class Likelihood:
    variant: str = "gaussian"
    num_classes: int = 0
    leak: float = DEFAULT_ROBUSTMAX_EPS

    def __post_init__(self) -> None:
        if self.variant not in ("gaussian", "robustmax"):
            raise ConfigError(f"unknown likelihood {self.variant!r}")
        if self.variant == "robustmax":
            if self.num_classes < 2:
                raise ConfigError("robust-max needs at least 2 classes")
            if not 0.0 < self.leak < 1.0 / self.num_classes:
                raise ConfigError(f"robust-max leak must lie in (0, 1/C), got {self.leak}")

    @property
    def is_gaussian(self) -> bool:
        return self.variant == "gaussian"

    def init_params(self) -> dict[str, np.ndarray]:
        if self.is_gaussian:
            return {"likelihood.log_noise_variance": np.array(DEFAULT_LOG_NOISE_VARIANCE)}
        return {}


def gaussian_loglik(y: object, f: object, noise_var: object) -> Tensor:
    """Pointwise log N(y | f, ν²)."""
    y, f, noise_var = as_tensor(y), as_tensor(f), as_tensor(noise_var)
    if np.any(noise_var.value <= 0.0):
        raise ContractError("noise variance must be positive")
    resid = ops.square(ops.sub(y, f))
    return ops.sub(
        ops.mul(-0.5, ops.add(LOG_2PI, ops.log(noise_var))),
        ops.div(resid, ops.mul(2.0, noise_var)),
    )


def gaussian_predictive_loglik(y: object, mean: object, var: object, noise_var: object) -> Tensor:
    """log N(y | μ, v + ν²), the last-layer marginal with the Gaussian noise folded in."""
    return gaussian_loglik(y, mean, ops.add(var, noise_var))


def gaussian_expected_loglik(y: object, mean: object, var: object, noise_var: object) -> Tensor:
    """E_{N(f|μ,v)}[log N(y|f,ν²)] = log N(y|μ,ν²) − v/(2ν²)."""
    noise_var = as_tensor(noise_var)
    return ops.sub(gaussian_loglik(y, mean, noise_var), ops.div(var, ops.mul(2.0, noise_var)))


def _argmax(f: np.ndarray) -> np.ndarray:
    # np.argmax already breaks ties towards the lowest index
    return np.argmax(f, axis=-1)


def robustmax_loglik(y: int, f: np.ndarray, leak: float) -> float:
    f = np.asarray(f, dtype=np.float64)
    classes = f.shape[-1]
    if not 0 <= y < classes:
        raise ContractError(f"class index {y} outside [0, {classes})")
    if int(_argmax(f)) == y:
        return float(np.log1p(-leak))
    return float(np.log(leak / (classes - 1)))


def robustmax_class_probs(f: np.ndarray, leak: float) -> np.ndarray:
    """Per-row class probabilities: 1−ε at the argmax, ε/(C−1) elsewhere."""
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    classes = f.shape[-1]
    probs = np.full(f.shape, leak / (classes - 1))
    probs[np.arange(f.shape[0]), _argmax(f)] = 1.0 - leak
    return probs


def robustmax_expected_loglik(
    y: np.ndarray, mean: object, var: object, leak: float, points: int = QUADRATURE_POINTS
) -> Tensor:
    """
    E[log p(y|f)] for f ~ N(mean, var) with one variance shared by all classes.

    The probability that the labelled latent is the largest is integrated with
    Gauss-Hermite quadrature over that latent, which keeps the objective
    differentiable in (mean, var).
    """
    mean, var = as_tensor(mean), as_tensor(var)
    n, classes = mean.shape
    onehot = np.zeros((n, classes))
    onehot[np.arange(n), np.asarray(y, dtype=int)] = 1.0
    mean_y = ops.reshape(ops.sum(ops.mul(mean, onehot), axis=1), (n, 1))
    std = ops.reshape(ops.sqrt(ops.add(var, 1e-12)), (n, 1))
    gap = ops.div(ops.sub(ops.expand(mean_y, (n, classes)), mean), ops.expand(std, (n, classes)))
    nodes, weights = np.polynomial.hermite.hermgauss(points)
    prob = Tensor(np.zeros(n))
    for x_q, w_q in zip(nodes, weights):
        log_cdf = ops.log_normal_cdf(ops.add(gap, np.sqrt(2.0) * x_q))
        inner = ops.exp(ops.sum(ops.mul(log_cdf, 1.0 - onehot), axis=1))
        prob = ops.add(prob, ops.mul(w_q / np.sqrt(np.pi), inner))
    hit, miss = float(np.log1p(-leak)), float(np.log(leak / (classes - 1)))
    return ops.add(ops.mul(prob, hit - miss), miss)
