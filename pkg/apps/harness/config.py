"""
Experiment configuration.

Files come in two formats: flat ``key = value`` text (``#`` comments, comma-separated
lists) and YAML. Both are validated by the same pydantic model, and
:meth:`ExperimentConfig.canonical_text` renders the sorted ``key=value`` form whose
SHA-256 is the run's ``config_hash``.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from apps.shared.errors import ConfigError

CLASSIFICATION_RATE = 0.02
CLASSIFICATION_BATCH = 256
DEFAULT_BATCH_CAP = 10000


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # Data
    data: str | None = None
    task: Literal["regression", "classification"] = "regression"
    targets: int = Field(default=1, ge=1)
    split_fraction: float = Field(default=0.9, gt=0.0, lt=1.0)
    split_seed: int | None = None

    # Model
    method: Literal["ipvi", "dsvi"] = "ipvi"
    tying: Literal["tied", "untied"] = "tied"
    num_layers: int = Field(default=1, ge=1)
    num_inducing: int = Field(default=128, ge=1)
    hidden_width: int | None = Field(default=None, ge=1)
    robustmax_eps: float = Field(default=1e-3, gt=0.0, lt=0.5)
    train_hypers: bool = True
    train_inducing: bool = True

    # Networks
    noise_dim: int | None = Field(default=None, ge=1)
    gen_hidden: tuple[int, ...] | None = None
    disc_hidden: tuple[int, ...] | None = None
    disc_kind: Literal["mlp", "quadratic"] = "mlp"

    # Sampling
    num_samples: int = Field(default=10, ge=1)
    disc_samples: int | None = Field(default=None, ge=1)
    mc_samples: int = Field(default=1, ge=1)
    predict_samples: int = Field(default=100, ge=1)

    # Optimization
    optimizer: Literal["adam", "sga"] = "adam"
    rate_psi: float = Field(default=0.05, gt=0.0)
    rate_phi: float = Field(default=0.001, gt=0.0)
    rate_theta: float = Field(default=0.025, gt=0.0)
    dsvi_rate: float = Field(default=0.01, gt=0.0)
    n_disc: int = Field(default=3, ge=1)
    max_iters: int = Field(default=20000, ge=1)
    batch_size: int | None = Field(default=None, ge=1)

    # Run
    seed: int = 0
    log_every: int = Field(default=100, ge=1)
    checkpoint_every: int = Field(default=0, ge=0)
    elbo_refine_steps: int = Field(default=500, ge=0)
    elbo_samples: int = Field(default=100, ge=1)

    @model_validator(mode="before")
    @classmethod
    def _classification_defaults(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("task") == "classification":
            data = dict(data)
            for key in ("rate_psi", "rate_phi", "rate_theta"):
                data.setdefault(key, CLASSIFICATION_RATE)
            data.setdefault("batch_size", CLASSIFICATION_BATCH)
        return data

    @field_validator("gen_hidden", "disc_hidden", mode="before")
    @classmethod
    def _split_widths(cls, value: Any) -> Any:
        if isinstance(value, str):
            parts = [p.strip() for p in value.split(",") if p.strip()]
            return tuple(int(p) for p in parts) if parts else None
        if isinstance(value, int):
            return (value,)
        return value

    @model_validator(mode="after")
    def _check_combination(self) -> ExperimentConfig:
        if self.method == "dsvi" and self.tying == "untied":
            raise ValueError("tying applies to ipvi only; dsvi runs must keep tying=tied")
        return self

    def effective_batch_size(self, n: int) -> int:
        return min(self.batch_size or min(n, DEFAULT_BATCH_CAP), n)

    def with_overrides(self, **changes: Any) -> ExperimentConfig:
        return parse_mapping({**self.model_dump(), **changes})

    def canonical_text(self) -> str:
        lines = []
        for key, value in sorted(self.model_dump().items()):
            lines.append(f"{key}={_render(value)}")
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()


def _render(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple | list):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_mapping(values: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(values)
    except ValidationError as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from exc


def parse_key_values(text: str) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {number}: expected key = value, got {raw!r}")
        value = value.strip()
        values[key.strip()] = value if value else None
    return values


def parse_text(text: str) -> ExperimentConfig:
    return parse_mapping(parse_key_values(text))


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix in (".yaml", ".yml"):
        try:
            loaded = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        values = loaded
    else:
        values = parse_key_values(text)
    if values.get("data") and not Path(str(values["data"])).is_absolute():
        values["data"] = str((path.parent / str(values["data"])).resolve())
    return parse_mapping(values)
