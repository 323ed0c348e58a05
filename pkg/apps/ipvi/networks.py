"""
Generator g_Φ and discriminator T_Ψ.

Tied networks share one MLP per DGP layer across all M inducing rows and take the
row's inducing input z_m as extra input, so their size does not depend on M. Untied
networks keep a separate set of weights per inducing row and see no z_m.

Inducing inputs reach the networks as constants: gradients w.r.t. Z flow only
through the data-fit term.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from apps.numcore import Rng, Tensor, ops
from apps.shared.errors import ConfigError

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class LayerShape:
    d_in: int
    d_out: int
    num_inducing: int


def _init_weight(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(shape) / np.sqrt(fan_in)


def _sizes(d_in: int, hidden: Sequence[int], d_out: int) -> list[int]:
    return [d_in, *hidden, d_out]


def mlp_init(prefix: str, sizes: Sequence[int], rng: Rng) -> Params:
    params: Params = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        params[f"{prefix}.W{i}"] = _init_weight(rng, (fan_in, fan_out), fan_in)
        params[f"{prefix}.b{i}"] = np.zeros(fan_out)
    return params


def mlp_forward(params: Mapping[str, Tensor], prefix: str, depth: int, x: Tensor) -> Tensor:
    """Leaky-ReLU hidden layers, linear output; ``x`` is (rows, features)."""
    h = x
    for i in range(depth):
        h = ops.add(ops.matmul(h, params[f"{prefix}.W{i}"]), params[f"{prefix}.b{i}"])
        if i < depth - 1:
            h = ops.leaky_relu(h)
    return h


def rowwise_init(prefix: str, rows: int, sizes: Sequence[int], rng: Rng) -> Params:
    params: Params = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        params[f"{prefix}.W{i}"] = _init_weight(rng, (rows, fan_in, fan_out), fan_in)
        params[f"{prefix}.b{i}"] = np.zeros((rows, fan_out))
    return params


def _rowwise_linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    # x: (K, M, a), weight: (M, a, b) -> (K, M, b)
    k, m, a = x.shape
    b = weight.shape[2]
    wide = ops.expand(ops.reshape(x, (k, m, a, 1)), (k, m, a, b))
    return ops.add(ops.sum(ops.mul(wide, weight), axis=2), bias)


def rowwise_forward(params: Mapping[str, Tensor], prefix: str, depth: int, x: Tensor) -> Tensor:
    """Per-row MLPs: row m of ``x`` (K, M, a) goes through its own weights."""
    h = x
    for i in range(depth):
        h = _rowwise_linear(h, params[f"{prefix}.W{i}"], params[f"{prefix}.b{i}"])
        if i < depth - 1:
            h = ops.leaky_relu(h)
    return h


def param_count(params: Mapping[str, np.ndarray]) -> int:
    return int(sum(np.size(v) for v in params.values()))


class Generator:
    """Maps noise ε (shared by every layer) to a joint draw of all inducing outputs."""

    def __init__(
        self,
        noise_dim: int,
        layers: Sequence[LayerShape],
        tied: bool = True,
        hidden: Sequence[int] | None = None,
    ):
        self.noise_dim = noise_dim
        self.layers = list(layers)
        self.tied = tied
        self.hidden = None if hidden is None else tuple(hidden)

    def _hidden(self, shape: LayerShape) -> tuple[int, ...]:
        return self.hidden if self.hidden is not None else (shape.d_in,)

    def _depth(self, shape: LayerShape) -> int:
        return len(self._hidden(shape)) + 1

    def init_params(self, rng: Rng) -> Params:
        params: Params = {}
        for i, shape in enumerate(self.layers):
            prefix = f"gen.layer{i}"
            if self.tied:
                sizes = _sizes(self.noise_dim + shape.d_in, self._hidden(shape), shape.d_out)
                params.update(mlp_init(prefix, sizes, rng))
            else:
                sizes = _sizes(self.noise_dim, self._hidden(shape), shape.d_out)
                params.update(rowwise_init(prefix, shape.num_inducing, sizes, rng))
        return params

    def generate_batch(
        self, params: Mapping[str, Tensor], eps: np.ndarray, z_all: Sequence[np.ndarray]
    ) -> list[Tensor]:
        """One stacked pass for K noise vectors; returns per-layer (K, M, D_out)."""
        eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
        k = eps.shape[0]
        out = []
        for i, (shape, z) in enumerate(zip(self.layers, z_all)):
            m = z.shape[0]
            prefix = f"gen.layer{i}"
            noise = np.broadcast_to(eps[:, None, :], (k, m, self.noise_dim))
            if self.tied:
                rows = np.concatenate([noise, np.broadcast_to(z, (k, m, shape.d_in))], axis=2)
                flat = Tensor(rows.reshape(k * m, -1))
                u = mlp_forward(params, prefix, self._depth(shape), flat)
                out.append(ops.reshape(u, (k, m, shape.d_out)))
            else:
                out.append(rowwise_forward(params, prefix, self._depth(shape), Tensor(noise)))
        return out


DISCRIMINATOR_KINDS = ("mlp", "quadratic")


class Discriminator:
    """T_Ψ(𝒰) summed over layers.

    ``kind="mlp"`` scores each inducing row on its own: T = Σ_ℓ Σ_m rowscore_ℓ(u_m ⊕ z_m).
    ``kind="quadratic"`` scores each output column jointly over all M rows,
    T_ℓ = Σ_d [−½ u_dᵀ P_ℓ u_d + b_ℓᵀ u_d] + c_ℓ, which can represent the exact log
    ratio between two Gaussians.
    """

    def __init__(
        self,
        layers: Sequence[LayerShape],
        tied: bool = True,
        hidden: Sequence[int] | None = None,
        kind: str = "mlp",
    ):
        if kind not in DISCRIMINATOR_KINDS:
            raise ConfigError(f"unknown discriminator kind {kind!r}")
        self.layers = list(layers)
        self.tied = tied
        self.hidden = None if hidden is None else tuple(hidden)
        self.kind = kind

    def _hidden(self, shape: LayerShape) -> tuple[int, ...]:
        return self.hidden if self.hidden is not None else (shape.d_in,)

    def init_params(self, rng: Rng) -> Params:
        params: Params = {}
        for i, shape in enumerate(self.layers):
            prefix = f"disc.layer{i}"
            if self.kind == "quadratic":
                m = shape.num_inducing
                params[f"{prefix}.P"] = np.zeros((m, m))
                params[f"{prefix}.b"] = np.zeros(m)
                params[f"{prefix}.c"] = np.zeros(1)
            elif self.tied:
                sizes = _sizes(shape.d_out + shape.d_in, self._hidden(shape), 1)
                params.update(mlp_init(prefix, sizes, rng))
            else:
                sizes = _sizes(shape.d_out, self._hidden(shape), 1)
                params.update(rowwise_init(prefix, shape.num_inducing, sizes, rng))
        return params

    def _quadratic_scores(self, params: Mapping[str, Tensor], prefix: str, u: Tensor) -> Tensor:
        k, m, d_out = u.shape
        precision = params[f"{prefix}.P"]
        shift = ops.reshape(params[f"{prefix}.b"], (m, 1))
        total = Tensor(np.zeros(k))
        for d in range(d_out):
            column = ops.getitem(u, (slice(None), slice(None), d))
            quad = ops.sum(ops.mul(ops.matmul(column, precision), column), axis=1)
            linear = ops.reshape(ops.matmul(column, shift), (k,))
            total = ops.add(total, ops.sub(linear, ops.mul(quad, 0.5)))
        return ops.add(total, params[f"{prefix}.c"])

    def layer_scores(
        self, params: Mapping[str, Tensor], layer: int, u: Tensor, z: np.ndarray
    ) -> Tensor:
        """Per-sample T_{ψ_ℓ}(U_ℓ) for a (K, M, D_out) block; shape (K,)."""
        shape = self.layers[layer]
        k, m, _ = u.shape
        prefix = f"disc.layer{layer}"
        if self.kind == "quadratic":
            return self._quadratic_scores(params, prefix, u)
        depth = len(self._hidden(shape)) + 1
        if self.tied:
            rows = ops.concat([u, Tensor(np.broadcast_to(z, (k, m, shape.d_in)))], axis=2)
            flat = ops.reshape(rows, (k * m, shape.d_out + shape.d_in))
            scores = ops.reshape(mlp_forward(params, prefix, depth, flat), (k, m))
        else:
            scores = ops.reshape(rowwise_forward(params, prefix, depth, u), (k, m))
        return ops.sum(scores, axis=1)

    def score(
        self, params: Mapping[str, Tensor], blocks: Sequence[object], z_all: Sequence[np.ndarray]
    ) -> Tensor:
        total: Tensor | None = None
        for layer, (block, z) in enumerate(zip(blocks, z_all)):
            u = block if isinstance(block, Tensor) else Tensor(block)
            part = self.layer_scores(params, layer, u, z)
            total = part if total is None else ops.add(total, part)
        assert total is not None
        return total
