"""Predictive evaluation: test mean log-likelihood over a mixture of posterior draws."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from apps.gpcore import gaussian_predictive_loglik, robustmax_class_probs
from apps.numcore import Rng, Tensor

from .model import DGPModel, InducingSample, forward_sample, last_layer_marginals

DEFAULT_PREDICT_SAMPLES = 100

PosteriorSampler = Callable[[int, Rng], list[InducingSample]]


@dataclass
class Prediction:
    mll: float
    per_point: np.ndarray
    accuracy: float | None = None


def sample_logliks(
    model: DGPModel, samples: list[InducingSample], x_star: np.ndarray, y_star: np.ndarray, rng: Rng
) -> tuple[np.ndarray, np.ndarray | None]:
    """(S, n) per-sample test log-likelihoods, plus (n, C) mean class probabilities."""
    bound = model.bind()
    lik = model.likelihood
    x = Tensor(x_star)
    rows = []
    probs = None
    for inducing in samples:
        if lik.is_gaussian:
            mean, var = last_layer_marginals(bound, x, inducing, rng)
            n, width = mean.shape
            var_cols = np.repeat(var.value[:, None], width, axis=1)
            ll = gaussian_predictive_loglik(
                np.reshape(y_star, (n, width)), mean, var_cols, bound.noise_var
            )
            rows.append(ll.value.sum(axis=1))
        else:
            f = forward_sample(bound, x, inducing, rng).value
            p = robustmax_class_probs(f, lik.leak)
            labels = np.ravel(y_star).astype(int)
            rows.append(np.log(p[np.arange(len(labels)), labels]))
            probs = p if probs is None else probs + p
    if probs is not None:
        probs = probs / len(samples)
    return np.vstack(rows), probs


def predict(
    model: DGPModel,
    sampler: PosteriorSampler,
    x_star: np.ndarray,
    y_star: np.ndarray,
    num_samples: int = DEFAULT_PREDICT_SAMPLES,
    rng: Rng | None = None,
) -> Prediction:
    rng = rng or Rng(0)
    samples = sampler(num_samples, rng)
    logliks, probs = sample_logliks(model, samples, x_star, y_star, rng)
    per_point = logsumexp(logliks, axis=0) - np.log(logliks.shape[0])
    accuracy = None
    if probs is not None:
        labels = np.ravel(y_star).astype(int)
        accuracy = float(np.mean(np.argmax(probs, axis=1) == labels))
    return Prediction(mll=float(np.mean(per_point)), per_point=per_point, accuracy=accuracy)
