"""Audiovisual video saliency prediction on a small numpy autograd engine."""

from stavis.errors import ConfigError, DegenerateError, NumericError, ShapeError
from stavis.tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = ["ConfigError", "DegenerateError", "NumericError", "ShapeError", "Tensor", "backward", "no_grad"]
