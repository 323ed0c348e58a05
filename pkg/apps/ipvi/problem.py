"""Adapter that exposes a DGP model and its training data to the inference game."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from apps.dgp import DGPModel, InducingSample, data_fit
from apps.numcore import Rng, Tensor, ops
from apps.shared.errors import ConfigError

from . import game
from .networks import LayerShape


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray


class DGPProblem:
    def __init__(
        self,
        model: DGPModel,
        x: np.ndarray,
        y: np.ndarray,
        batch_size: int | None = None,
        num_samples: int = 1,
        train_hypers: bool = True,
        train_inducing: bool = True,
    ):
        if num_samples < 1:
            raise ConfigError("S must be at least 1")
        self.model = model
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y)
        self.batch_size = min(batch_size or len(self.x), len(self.x))
        self.num_samples = num_samples
        self.theta_names = model.theta_names(train_hypers, train_inducing)
        m = model.num_inducing
        self.layers = [LayerShape(layer.d_in, layer.d_out, m) for layer in model.layers]

    def inducing_inputs(self) -> list[np.ndarray]:
        return self.model.inducing_inputs()

    def theta_params(self) -> dict[str, np.ndarray]:
        return {name: self.model.params[name] for name in self.theta_names}

    def update_theta(self, values: Mapping[str, np.ndarray]) -> None:
        self.model.params.update(values)

    def prior_blocks(self, count: int, rng: Rng) -> list[np.ndarray]:
        return game.prior_blocks(self.model, count, rng)

    def next_batch(self, rng: Rng) -> Batch:
        if self.batch_size >= len(self.x):
            return self.full_batch()
        idx = rng.permutation(len(self.x))[: self.batch_size]
        return Batch(self.x[idx], self.y[idx])

    def full_batch(self) -> Batch:
        return Batch(self.x, self.y)

    def data_fit_sum(
        self,
        theta: Mapping[str, Tensor],
        samples: Sequence[InducingSample],
        batch: Batch,
        rng: Rng,
    ) -> Tensor:
        bound = self.model.bind(theta)
        total = Tensor(0.0)
        for inducing in samples:
            total = ops.add(total, data_fit(bound, batch.x, batch.y, inducing, self.num_samples, rng))
        return total
