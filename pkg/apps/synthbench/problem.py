"""The synthetic benchmark posed as an inference game with one inducing point at z = 0."""

from __future__ import annotations

from collections.abc import Mapping, Sequence

import numpy as np

from apps.dgp import InducingSample
from apps.gpcore import gaussian_loglik
from apps.ipvi import Batch, LayerShape
from apps.numcore import Rng, Tensor, ops

from .mixture import NOISE_VARIANCE, NUM_OBSERVATIONS, sample_prior


class MixtureProblem:
    """
    Known kernel and noise, so θ is empty. With a constant kernel and x = z = 0 the
    conditional p(f | u) collapses to f = u and the data fit is exact.
    """

    def __init__(self, observations: np.ndarray | None = None):
        y = np.zeros(NUM_OBSERVATIONS) if observations is None else np.asarray(observations)
        self.batch = Batch(np.zeros((len(y), 1)), y.astype(np.float64))
        self.layers = [LayerShape(d_in=1, d_out=1, num_inducing=1)]

    def inducing_inputs(self) -> list[np.ndarray]:
        return [np.zeros((1, 1))]

    def theta_params(self) -> dict[str, np.ndarray]:
        return {}

    def update_theta(self, values: Mapping[str, np.ndarray]) -> None:
        return None

    def prior_blocks(self, count: int, rng: Rng) -> list[np.ndarray]:
        return [sample_prior(count, rng).reshape(count, 1, 1)]

    def next_batch(self, rng: Rng) -> Batch:
        return self.batch

    def full_batch(self) -> Batch:
        return self.batch

    def data_fit_sum(
        self,
        theta: Mapping[str, Tensor],
        samples: Sequence[InducingSample],
        batch: Batch,
        rng: Rng,
    ) -> Tensor:
        n = len(batch.y)
        y = batch.y.reshape(n, 1)
        total = Tensor(0.0)
        for inducing in samples:
            f = ops.expand(ops.reshape(inducing[0], (1, 1)), (n, 1))
            total = ops.add(total, ops.sum(gaussian_loglik(y, f, NOISE_VARIANCE)))
        return total
