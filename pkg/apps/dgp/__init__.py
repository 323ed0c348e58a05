from .model import (
    BoundDGP,
    DGPLayer,
    DGPModel,
    InducingSample,
    build,
    data_fit,
    forward_sample,
    last_layer_marginals,
    skip_weights,
    stack_samples,
)
from .predict import Prediction, predict

__all__ = [
    "BoundDGP",
    "DGPLayer",
    "DGPModel",
    "InducingSample",
    "Prediction",
    "build",
    "data_fit",
    "forward_sample",
    "last_layer_marginals",
    "predict",
    "skip_weights",
    "stack_samples",
]
