"""
Deep GP layer stack with skip-layer linear mean functions.

Model hyperparameters θ (inducing inputs, kernel hypers, Gaussian noise) live in one
flat ``params`` dict keyed ``layer{ℓ}.<name>`` / ``likelihood.<name>`` so optimizers
and checkpoints can treat them as named blobs. The skip weights are fixed arrays,
never tape leaves.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import structlog
from sklearn.cluster import kmeans_plusplus

from apps.gpcore import (
    KernelHyper,
    Likelihood,
    conditional,
    gaussian_loglik,
    kzz_cholesky,
    robustmax_expected_loglik,
)
from apps.numcore import Tensor, as_tensor, bind, ops
from apps.shared.errors import ConfigError, DimensionError

logger = structlog.get_logger(__name__)

VARIANCE_FLOOR = 1e-12


class NormalSource(Protocol):
    def normal(self, shape: tuple[int, ...] | int) -> np.ndarray: ...


class ModelOptions(Protocol):
    num_layers: int
    num_inducing: int
    hidden_width: int | None
    seed: int


@dataclass
class DGPLayer:
    d_in: int
    d_out: int
    w_mean: np.ndarray

    def __post_init__(self) -> None:
        if self.w_mean.shape != (self.d_in, self.d_out):
            raise DimensionError(
                f"skip weights {self.w_mean.shape} do not match ({self.d_in}, {self.d_out})"
            )


@dataclass
class DGPModel:
    layers: list[DGPLayer]
    likelihood: Likelihood
    n_total: int
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for upper, lower in zip(self.layers, self.layers[1:]):
            if upper.d_out != lower.d_in:
                raise DimensionError(
                    f"layer widths do not chain: {upper.d_out} feeds {lower.d_in}"
                )

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].d_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].d_out

    @property
    def num_inducing(self) -> int:
        return self.params["layer0.Z"].shape[0]

    def inducing_inputs(self) -> list[np.ndarray]:
        return [self.params[f"layer{i}.Z"] for i in range(self.num_layers)]

    def theta_names(self, train_hypers: bool = True, train_inducing: bool = True) -> list[str]:
        names = []
        for name in self.params:
            is_inducing = name.endswith(".Z")
            if (is_inducing and train_inducing) or (not is_inducing and train_hypers):
                names.append(name)
        return names

    def bind(self, theta: Mapping[str, Tensor] | None = None) -> BoundDGP:
        merged = bind(self.params)
        if theta is not None:
            merged.update(theta)
        return BoundDGP(self, merged)


class BoundDGP:
    """A model with θ resolved to tensors (tape leaves or constants) for one step."""

    def __init__(self, model: DGPModel, theta: Mapping[str, Tensor]):
        self.model = model
        self.theta = theta
        self.hypers = [
            KernelHyper.from_params(theta, f"layer{i}.") for i in range(model.num_layers)
        ]
        self.z = [as_tensor(theta[f"layer{i}.Z"]) for i in range(model.num_layers)]
        self._chols: dict[int, Tensor] = {}

    def chol(self, layer: int) -> Tensor:
        if layer not in self._chols:
            self._chols[layer] = kzz_cholesky(self.z[layer], self.hypers[layer]).factor
        return self._chols[layer]

    @property
    def noise_var(self) -> Tensor:
        return ops.exp(self.theta["likelihood.log_noise_variance"])


@dataclass
class InducingSample:
    """One joint draw 𝒰 = {U_ℓ}, each U_ℓ of shape M × D_out."""

    u: list[Tensor]

    def __len__(self) -> int:
        return len(self.u)

    def __getitem__(self, layer: int) -> Tensor:
        return self.u[layer]

    def check(self, model: DGPModel) -> None:
        if len(self.u) != model.num_layers:
            raise DimensionError(f"{len(self.u)} inducing blocks for {model.num_layers} layers")
        for i, (block, layer) in enumerate(zip(self.u, model.layers)):
            if block.ndim != 2 or block.shape[1] != layer.d_out:
                raise DimensionError(f"layer {i}: inducing block {block.shape}, width {layer.d_out}")

    def values(self) -> list[np.ndarray]:
        return [block.value for block in self.u]


# ------------------------------------------------------------------------- build


def skip_weights(inputs: np.ndarray, d_out: int) -> np.ndarray:
    """Identity when widths agree, else the top right singular vectors of ``inputs``."""
    d_in = inputs.shape[1]
    if d_in == d_out:
        return np.eye(d_in)
    if d_in < d_out:
        return np.hstack([np.eye(d_in), np.zeros((d_in, d_out - d_in))])
    _, _, vt = np.linalg.svd(inputs, full_matrices=False)
    return vt[:d_out].T.copy()


def layer_widths(input_dim: int, output_dim: int, num_layers: int, hidden: int | None) -> list[int]:
    width = hidden or input_dim
    return [input_dim] + [width] * (num_layers - 1) + [output_dim]


def build(options: ModelOptions, x_train: np.ndarray, y_dim: int, likelihood: Likelihood) -> DGPModel:
    x_train = np.asarray(x_train, dtype=np.float64)
    n, d = x_train.shape
    m = options.num_inducing
    if m > n:
        raise ConfigError(f"{m} inducing points requested for {n} training rows")
    if options.num_layers < 1:
        raise ConfigError("a DGP needs at least one layer")

    widths = layer_widths(d, y_dim, options.num_layers, options.hidden_width)
    z0, _ = kmeans_plusplus(x_train, n_clusters=m, random_state=options.seed)

    layers: list[DGPLayer] = []
    params: dict[str, np.ndarray] = {}
    nominal, z = x_train, np.asarray(z0, dtype=np.float64)
    for i, (d_in, d_out) in enumerate(zip(widths, widths[1:])):
        w = skip_weights(nominal, d_out)
        layers.append(DGPLayer(d_in, d_out, w))
        params[f"layer{i}.Z"] = z.copy()
        params.update(KernelHyper.init_params(d_in, f"layer{i}."))
        nominal, z = nominal @ w, z @ w
    params.update(likelihood.init_params())

    logger.info("dgp_built", layers=len(layers), widths=widths, inducing=m, n=n)
    return DGPModel(layers=layers, likelihood=likelihood, n_total=n, params=params)


# ----------------------------------------------------------------------- forward


def _as_bound(model: DGPModel | BoundDGP) -> BoundDGP:
    return model if isinstance(model, BoundDGP) else model.bind()


def _layer_marginals(
    bound: BoundDGP, layer: int, f_in: Tensor, u: Tensor
) -> tuple[Tensor, Tensor]:
    layer_def = bound.model.layers[layer]
    mean, var = conditional(f_in, bound.z[layer], u, bound.hypers[layer], chol=bound.chol(layer))
    return ops.add(mean, ops.matmul(f_in, Tensor(layer_def.w_mean))), var


def _sample(mean: Tensor, var: Tensor, rng: NormalSource) -> Tensor:
    n, width = mean.shape
    std = ops.sqrt(ops.add(ops.reshape(var, (n, 1)), VARIANCE_FLOOR))
    noise = rng.normal((n, width))
    return ops.add(mean, ops.mul(ops.expand(std, (n, width)), noise))


def last_layer_marginals(
    model: DGPModel | BoundDGP,
    x_b: object,
    inducing: InducingSample,
    rng: NormalSource,
) -> tuple[Tensor, Tensor]:
    """Sample hidden layers, return the final layer's marginal mean and variance."""
    bound = _as_bound(model)
    inducing.check(bound.model)
    f = as_tensor(x_b)
    last = bound.model.num_layers - 1
    for layer in range(last):
        mean, var = _layer_marginals(bound, layer, f, inducing[layer])
        f = _sample(mean, var, rng)
    return _layer_marginals(bound, last, f, inducing[last])


def forward_sample(
    model: DGPModel | BoundDGP,
    x_b: object,
    inducing: InducingSample,
    rng: NormalSource,
) -> Tensor:
    """Reparameterized draw of F_L given 𝒰, fresh noise in every layer."""
    mean, var = last_layer_marginals(model, x_b, inducing, rng)
    return _sample(mean, var, rng)


def data_fit(
    model: DGPModel | BoundDGP,
    x_b: object,
    y_b: np.ndarray,
    inducing: InducingSample,
    num_samples: int,
    rng: NormalSource,
) -> Tensor:
    """(N/|b|) · mean over S draws of Σ_i log p(y_i | f_i)."""
    bound = _as_bound(model)
    x_b = as_tensor(x_b)
    n_batch = x_b.shape[0]
    if n_batch < 1 or num_samples < 1:
        raise ConfigError("data_fit needs a non-empty batch and at least one sample")
    likelihood = bound.model.likelihood
    total: Tensor | None = None
    for _ in range(num_samples):
        if likelihood.is_gaussian:
            f = forward_sample(bound, x_b, inducing, rng)
            ll = _gaussian_sum(y_b, f, bound.noise_var)
        else:
            mean, var = last_layer_marginals(bound, x_b, inducing, rng)
            ll = ops.sum(_robustmax_expected(likelihood, y_b, mean, var))
        total = ll if total is None else ops.add(total, ll)
    assert total is not None
    scale = bound.model.n_total / n_batch
    return ops.mul(total, scale / num_samples)


def _gaussian_sum(y_b: np.ndarray, f: Tensor, noise_var: Tensor) -> Tensor:
    return ops.sum(gaussian_loglik(np.reshape(y_b, f.shape), f, noise_var))


def _robustmax_expected(
    likelihood: Likelihood, y_b: np.ndarray, mean: Tensor, var: Tensor
) -> Tensor:
    return robustmax_expected_loglik(np.ravel(y_b).astype(int), mean, var, likelihood.leak)


def stack_samples(blocks: Sequence[np.ndarray]) -> list[InducingSample]:
    """Turn per-layer ``(K, M, D_out)`` arrays into K constant InducingSamples."""
    count = blocks[0].shape[0] if len(blocks) else 0
    return [InducingSample([Tensor(layer[k]) for layer in blocks]) for k in range(count)]
