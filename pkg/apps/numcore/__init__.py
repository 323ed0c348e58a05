"""Dense float64 tensors, seeded RNG and a reverse-mode gradient tape."""

from . import linalg, ops, optim
from .rng import Rng
from .tensor import Gradients, Tape, Tensor, as_tensor, backward, bind

__all__ = [
    "Gradients",
    "Rng",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "bind",
    "linalg",
    "ops",
    "optim",
]
