"""Saliency training losses.

Each loss takes maps of shape (..., H, W) and returns one value per leading
index (a scalar for a single map). Statistics are population statistics
(divide by the pixel count).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stavis import tensor as T
from stavis.errors import DegenerateError, ShapeError
from stavis.tensor import Tensor

CE_EPS = 1e-7
STD_FLOOR = 1e-8
_SPATIAL = (-2, -1)


@dataclass(frozen=True)
class LossWeights:
    ce: float = 0.1
    cc: float = 2.0
    nss: float = 1.0

    def __post_init__(self):
        if min(self.ce, self.cc, self.nss) < 0:
            raise ValueError("loss weights must be nonnegative")


def _check(p: Tensor, y) -> np.ndarray:
    y = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if p.shape[-2:] != y.shape[-2:] or p.ndim < 2:
        raise ShapeError(f"prediction {p.shape} vs ground truth {y.shape}")
    return y


def _std(x: Tensor) -> tuple[Tensor, Tensor]:
    centred = x - T.mean(x, axis=_SPATIAL, keepdims=True)
    return centred, T.sqrt(T.mean(centred * centred, axis=_SPATIAL, keepdims=True))


def loss_ce(p, y_den) -> Tensor:
    """Binary cross-entropy summed over pixels, with P clamped to [eps, 1 - eps]."""
    p = T.as_tensor(p)
    y = _check(p, y_den)
    pc = T.clip(p, CE_EPS, 1.0 - CE_EPS)
    per_pixel = y * T.log(pc) + (1.0 - y) * T.log(1.0 - pc)
    return -T.tsum(per_pixel, axis=_SPATIAL)


def loss_cc(p, y_den) -> Tensor:
    """Negative Pearson correlation between prediction and dense map."""
    p = T.as_tensor(p)
    y = _check(p, y_den)
    yc = y - y.mean(axis=_SPATIAL, keepdims=True)
    y_std = np.sqrt((yc * yc).mean(axis=_SPATIAL, keepdims=True))
    pc, p_std = _std(p)
    if np.any(p_std.data <= STD_FLOOR) or np.any(y_std <= STD_FLOOR):
        raise DegenerateError("correlation of a constant map is undefined")
    cov = T.mean(pc * yc, axis=_SPATIAL, keepdims=True)
    return -(cov / (p_std * y_std)).reshape(p.shape[:-2])


def loss_nss(p, y_fix) -> Tensor:
    """Negative mean z-scored prediction at fixated pixels."""
    p = T.as_tensor(p)
    fix = _check(p, y_fix)
    n_fix = fix.sum(axis=_SPATIAL)
    if np.any(n_fix < 1):
        raise DegenerateError("NSS needs at least one fixation")
    pc, p_std = _std(p)
    if np.any(p_std.data <= STD_FLOOR):
        raise DegenerateError("NSS of a constant map is undefined")
    z = pc / p_std
    return -T.tsum(z * fix, axis=_SPATIAL) / n_fix


def loss_combined(ce, cc, nss, weights: LossWeights = LossWeights()):
    return weights.ce * ce + weights.cc * cc + weights.nss * nss


def saliency_loss(p, y_fix, y_den, weights: LossWeights = LossWeights()) -> Tensor:
    """Weighted CE + CC + NSS on a probability map."""
    return loss_combined(loss_ce(p, y_den), loss_cc(p, y_den), loss_nss(p, y_fix), weights)


def loss_visual_deep(s_v, activations, y_fix, y_den, weights: LossWeights = LossWeights()) -> Tensor:
    """Deep supervision: the loss on sigmoid(S^v) plus one per activation map A^m."""
    total = saliency_loss(T.sigmoid(s_v), y_fix, y_den, weights)
    for a in activations:
        total = total + saliency_loss(T.sigmoid(a), y_fix, y_den, weights)
    return total


def loss_av(s_av, y_fix, y_den, weights: LossWeights = LossWeights(), already_probability: bool = False) -> Tensor:
    p = T.as_tensor(s_av) if already_probability else T.sigmoid(s_av)
    return saliency_loss(p, y_fix, y_den, weights)
