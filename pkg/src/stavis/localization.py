"""Sound-source localization: project audio and visual features to a shared
space, then score their agreement at every grid cell.

Three scorers of increasing capacity:

* ``localize_cosine``   -- cosine similarity, no parameters, one map;
* ``localize_inner``    -- per-dimension weighted inner product, N_out maps;
* ``localize_bilinear`` -- full bilinear form ``h_v^T M^j h_a``, N_out maps.

The bilinear form reduces to the weighted inner product when every ``M^j`` is
diagonal, and to an unnormalized cosine when ``M`` is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stavis import tensor as T
from stavis.errors import ShapeError
from stavis.nn import Params, uniform, zeros
from stavis.tensor import Tensor

OPERATORS = ("l1", "l2", "l3")
COSINE_EPS = 1e-8


@dataclass
class LocalizationMaps:
    maps: Tensor  # (N, N_out, N_X, N_Y) or (N_out, N_X, N_Y)
    operator: str

    @property
    def n_out(self) -> int:
        return self.maps.shape[-3]


def init_localization_params(
    operator: str,
    visual_dim: int,
    audio_dim: int,
    hidden_dim: int,
    n_out: int,
    rng: np.random.Generator,
    bilinear_noise: float = 0.01,
) -> Params:
    if operator not in OPERATORS:
        raise ValueError(f"unknown localization operator {operator!r}")
    p: Params = {
        "loc.U_a": uniform(rng, (hidden_dim, audio_dim), audio_dim),
        "loc.b_a": zeros(hidden_dim),
        "loc.U_v": uniform(rng, (hidden_dim, visual_dim), visual_dim),
        "loc.b_v": zeros(hidden_dim),
    }
    if operator == "l2":
        p["loc.s"] = Tensor(np.ones((n_out, hidden_dim)) + bilinear_noise * rng.standard_normal((n_out, hidden_dim)), requires_grad=True)
        p["loc.beta"] = zeros(n_out)
    elif operator == "l3":
        eye = np.broadcast_to(np.eye(hidden_dim), (n_out, hidden_dim, hidden_dim))
        noise = bilinear_noise * rng.standard_normal((n_out, hidden_dim, hidden_dim))
        p["loc.M"] = Tensor(eye + noise, requires_grad=True)
        p["loc.mu"] = zeros(n_out)
    return p


def project_features(f_v, f_a, params: Params) -> tuple[Tensor, Tensor]:
    """Affine re-projection of visual (D_v, X, Y) and audio (D_a,) features to D_h.

    Batched inputs (N, D_v, X, Y) / (N, D_a) are accepted. The projected audio
    vector is tiled over the grid so both outputs have the same shape.
    """
    f_v, f_a = T.as_tensor(f_v), T.as_tensor(f_a)
    batched = f_v.ndim == 4
    if f_v.ndim not in (3, 4) or f_a.ndim != (2 if batched else 1):
        raise ShapeError(f"incompatible feature shapes {f_v.shape} and {f_a.shape}")
    if batched and f_v.shape[0] != f_a.shape[0]:
        raise ShapeError("visual and audio batch sizes differ")
    axis = 1 if batched else 0
    h_v = T.affine(f_v, params["loc.U_v"], params["loc.b_v"], axis=axis)
    h_a = T.affine(f_a, params["loc.U_a"], params["loc.b_a"], axis=axis)
    grid = f_v.shape[-2:]
    h_a = h_a.reshape(*h_a.shape, 1, 1)
    return h_v, T.broadcast_to(h_a, h_a.shape[:-2] + grid)


def _channel_axis(h: Tensor) -> int:
    if h.ndim not in (3, 4):
        raise ShapeError(f"expected (D_h, X, Y) or (N, D_h, X, Y), got {h.shape}")
    return h.ndim - 3


def localize_cosine(h_v, h_a, eps: float = COSINE_EPS) -> LocalizationMaps:
    h_v, h_a = T.as_tensor(h_v), T.as_tensor(h_a)
    if h_v.shape != h_a.shape:
        raise ShapeError(f"{h_v.shape} vs {h_a.shape}")
    axis = _channel_axis(h_v)
    dot = T.tsum(h_v * h_a, axis=axis, keepdims=True)
    norms = T.l2norm(h_v, axis, keepdims=True) * T.l2norm(h_a, axis, keepdims=True)
    # a floor rather than an additive eps keeps the result exact for ordinary vectors
    return LocalizationMaps(dot / T.clip(norms, eps, np.inf), "l1")


def localize_inner(h_v, h_a, s, beta) -> LocalizationMaps:
    h_v, h_a, s, beta = (T.as_tensor(v) for v in (h_v, h_a, s, beta))
    if h_v.shape != h_a.shape:
        raise ShapeError(f"{h_v.shape} vs {h_a.shape}")
    d_h = h_v.shape[_channel_axis(h_v)]
    if s.ndim != 2 or s.shape[1] != d_h or beta.shape != (s.shape[0],):
        raise ShapeError(f"weights {s.shape} / offsets {beta.shape} do not fit D_h={d_h}")
    if h_v.ndim == 4:
        maps = T.einsum("jk,nkxy,nkxy->njxy", s, h_v, h_a) + beta.reshape(1, -1, 1, 1)
    else:
        maps = T.einsum("jk,kxy,kxy->jxy", s, h_v, h_a) + beta.reshape(-1, 1, 1)
    return LocalizationMaps(maps, "l2")


def localize_bilinear(h_v, h_a, M, mu) -> LocalizationMaps:
    h_v, h_a, M, mu = (T.as_tensor(v) for v in (h_v, h_a, M, mu))
    if h_v.shape != h_a.shape:
        raise ShapeError(f"{h_v.shape} vs {h_a.shape}")
    d_h = h_v.shape[_channel_axis(h_v)]
    if M.ndim != 3 or M.shape[1:] != (d_h, d_h) or mu.shape != (M.shape[0],):
        raise ShapeError(f"bilinear weights {M.shape} / offsets {mu.shape} do not fit D_h={d_h}")
    if h_v.ndim == 4:
        maps = T.einsum("jlk,nlxy,nkxy->njxy", M, h_v, h_a) + mu.reshape(1, -1, 1, 1)
    else:
        maps = T.einsum("jlk,lxy,kxy->jxy", M, h_v, h_a) + mu.reshape(-1, 1, 1)
    return LocalizationMaps(maps, "l3")


def localize(operator: str, h_v, h_a, params: Params) -> LocalizationMaps:
    if operator == "l1":
        return localize_cosine(h_v, h_a)
    if operator == "l2":
        return localize_inner(h_v, h_a, params["loc.s"], params["loc.beta"])
    if operator == "l3":
        return localize_bilinear(h_v, h_a, params["loc.M"], params["loc.mu"])
    raise ValueError(f"unknown localization operator {operator!r}")
