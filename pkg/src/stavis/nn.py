"""Parameter containers and initializers."""

from __future__ import annotations

import numpy as np

from stavis.tensor import Tensor

Params = dict[str, Tensor]


def uniform(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> Tensor:
    """Fan-in scaled uniform init, bound ``gain * sqrt(3 / fan_in)`` (unit-variance preserving)."""
    bound = gain * np.sqrt(3.0 / max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def conv_weight(rng: np.random.Generator, c_out: int, c_in: int, kernel, gain: float = np.sqrt(2.0)) -> Tensor:
    kernel = tuple(kernel)
    return uniform(rng, (c_out, c_in) + kernel, c_in * int(np.prod(kernel)), gain)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def full(shape, value: float) -> Tensor:
    return Tensor(np.full(shape, float(value)), requires_grad=True)


def count(params: Params) -> int:
    return sum(p.size for p in params.values())
