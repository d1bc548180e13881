"""Audiovisual fusion schemes.

All maps are at image resolution. ``s3`` and ``s2_multi`` return logits;
``s1``, ``s2`` and ``late`` combine sigmoids into a weight-implied range that
:func:`to_unit_range` maps onto [0, 1] (see :func:`outputs_probability`).
"""

from __future__ import annotations

import numpy as np

from stavis import tensor as T
from stavis.errors import ShapeError
from stavis.localization import LocalizationMaps
from stavis.nn import Params, full, uniform, zeros
from stavis.tensor import Tensor

SCHEMES = ("s1", "s2", "s2_multi", "s3", "late")


def outputs_probability(scheme: str) -> bool:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown fusion scheme {scheme!r}")
    return scheme in ("s1", "s2", "late")


def init_fusion_params(scheme: str, n_levels: int, n_out: int, rng: np.random.Generator) -> Params:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown fusion scheme {scheme!r}")
    p: Params = {}
    if scheme in ("s1", "s2", "late"):
        p["fusion.audio_map.w"] = uniform(rng, (1, n_out, 1, 1), n_out)
        p["fusion.audio_map.b"] = zeros(1)
    if scheme == "s1":
        p["fusion.w_v"] = full((), 1.0)
        p["fusion.w_a"] = full((), 1.0)
    if scheme == "s2_multi":
        p["fusion.multi.w"] = uniform(rng, (1, n_levels, 1, 1), n_levels)
        p["fusion.multi.b"] = zeros(1)
    if scheme in ("s3", "late"):
        p["fusion.cat.w"] = uniform(rng, (1, n_levels + n_out, 1, 1), n_levels + n_out)
        p["fusion.cat.b"] = zeros(1)
    if scheme == "late":
        p["fusion.late_v"] = full((), 1.0)
        p["fusion.late_a"] = full((), 1.0)
        p["fusion.late_av"] = full((), 1.0)
    return p


def _maps(loc) -> Tensor:
    return loc.maps if isinstance(loc, LocalizationMaps) else T.as_tensor(loc)


def _pointwise(x: Tensor, weight, bias) -> Tensor:
    """1x1 convolution of a (N, C, H, W) or (C, H, W) stack down to one map."""
    weight = T.as_tensor(weight)
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected a channel stack, got {x.shape}")
    c = x.shape[-3]
    if weight.size != c:
        raise ShapeError(f"fusion conv expects {weight.size} channels, got {c}")
    out = T.conv(x, weight.reshape(1, c, 1, 1), bias, rank=2)
    return out[:, 0] if x.ndim == 4 else out[0]


def upsample_maps(loc, height: int, width: int) -> Tensor:
    return T.upsample2d(_maps(loc), height, width)


def audio_map_from_localization(loc, weight, bias) -> Tensor:
    """S^a: 1x1 conv over the (already upsampled) N_out localization maps."""
    return _pointwise(_maps(loc), weight, bias)


def fuse_linear(s_v, s_a, w_v, w_a) -> Tensor:
    return w_v * T.sigmoid(s_v) + w_a * T.sigmoid(s_a)


def fuse_modulate(s_v, s_a) -> Tensor:
    return T.sigmoid(s_v) * (1.0 + T.sigmoid(s_a))


def fuse_modulate_multi(levels, loc, weight, bias) -> Tensor:
    """Per level ``sigmoid(V^j) * (1 + sigmoid(L^j))``, stacked, then a 1x1 conv.

    ``levels`` is a sequence of per-level maps or an already-stacked tensor.
    """
    v = T.stack(list(levels), axis=-3) if isinstance(levels, (list, tuple)) else T.as_tensor(levels)
    l_maps = _maps(loc)
    if v.shape[-3] != l_maps.shape[-3]:
        raise ShapeError(f"{v.shape[-3]} visual levels vs {l_maps.shape[-3]} localization maps")
    if v.shape != l_maps.shape:
        raise ShapeError(f"visual stack {v.shape} vs localization stack {l_maps.shape}")
    return _pointwise(T.sigmoid(v) * (1.0 + T.sigmoid(l_maps)), weight, bias)


def fuse_concat(levels, loc, weight, bias) -> Tensor:
    """S_3: 1x1 conv over the concatenation (S^1 | ... | S^4 | L) -> logits."""
    v = T.stack(list(levels), axis=-3) if isinstance(levels, (list, tuple)) else T.as_tensor(levels)
    l_maps = _maps(loc)
    if v.shape[-2:] != l_maps.shape[-2:] or v.ndim != l_maps.ndim:
        raise ShapeError(f"visual stack {v.shape} vs localization stack {l_maps.shape}")
    return _pointwise(T.concat([v, l_maps], axis=-3), weight, bias)


def fuse_late(s_v, s_a, s_3, w_v, w_a, w_av) -> Tensor:
    return w_v * T.sigmoid(s_v) + w_a * T.sigmoid(s_a) + w_av * T.sigmoid(s_3)


def _weights(scheme: str, params: Params) -> list[Tensor]:
    if scheme == "s1":
        return [params["fusion.w_v"], params["fusion.w_a"]]
    return [params["fusion.late_v"], params["fusion.late_a"], params["fusion.late_av"]]


def to_unit_range(out, scheme: str, params: Params) -> Tensor:
    """Affine map of an ``s1``/``s2``/``late`` output from its analytic range onto [0, 1].

    ``s2`` lies in [0, 2]. A weighted sum of sigmoids lies in
    [sum of negative weights, sum of positive weights]. The map is increasing,
    so CC, NSS and both AUCs are unchanged; with nonnegative weights it is a
    pure scaling and SIM is unchanged too.
    """
    out = T.as_tensor(out)
    if scheme == "s2":
        return out * 0.5
    if scheme not in ("s1", "late"):
        raise ValueError(f"scheme {scheme!r} does not output a bounded combination of sigmoids")
    ws = _weights(scheme, params)
    lo = sum(-T.relu(-w) for w in ws)
    span = sum(T.relu(w) + T.relu(-w) for w in ws)
    # all-zero weights give a constant map; the floor keeps it finite
    return (out - lo) / T.clip(span, 1e-12, np.inf)
