"""Spatio-temporal visual pathway with a deeply supervised attention module per level.

Four conv blocks produce features at decreasing resolution. After each block a
DSAM averages the features over time, runs a 3x3 conv (ReLU) and a 1x1 conv
giving a saliency-feature map S^m and an activation map A^m. The spatial
softmax of A^m reweights the block output, ``(1 + M^m) * X^m``, before it
enters the next block. S^m and A^m are upsampled to the input size; a 1x1
conv over the stacked S^m gives the visual saliency logits S^v.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from stavis import tensor as T
from stavis.errors import ConfigError, ShapeError
from stavis.nn import Params, conv_weight, uniform, zeros
from stavis.tensor import Tensor, conv_output_size

N_LEVELS = 4


def _triple(v) -> tuple[int, int, int]:
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ConfigError(f"expected (t, h, w) triple, got {v}")
    return v


@dataclass
class BackboneConfig:
    channels: tuple[int, ...] = (8, 16, 32, 64)
    frames: int = 16
    height: int = 64
    width: int = 64
    conv1_kernel: tuple[int, int, int] = (3, 3, 3)
    conv1_stride: tuple[int, int, int] = (1, 2, 2)
    pool_window: tuple[int, int, int] = (2, 2, 2)
    pool_stride: tuple[int, int, int] = (2, 2, 2)
    block_kernel: tuple[int, int, int] = (3, 3, 3)
    block_strides: tuple[tuple[int, int, int], ...] = ((1, 1, 1), (2, 2, 2), (2, 2, 2))
    dsam_hidden: int = 8
    residual: bool = False

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.conv1_kernel = _triple(self.conv1_kernel)
        self.conv1_stride = _triple(self.conv1_stride)
        self.pool_window = _triple(self.pool_window)
        self.pool_stride = _triple(self.pool_stride)
        self.block_kernel = _triple(self.block_kernel)
        self.block_strides = tuple(_triple(s) for s in self.block_strides)
        self.validate()

    def validate(self) -> None:
        if len(self.channels) != N_LEVELS:
            raise ConfigError(f"backbone needs exactly {N_LEVELS} levels, got {len(self.channels)}")
        if len(self.block_strides) != N_LEVELS - 1:
            raise ConfigError("block_strides needs one entry per block after conv1")
        if min(self.channels) < 1 or self.dsam_hidden < 1:
            raise ConfigError("channel counts must be positive")
        if self.frames != 16:
            raise ConfigError("clips are 16 frames long")
        try:
            shapes = self.level_shapes()
        except ShapeError as exc:
            raise ConfigError(str(exc)) from exc
        if min(shapes[2][2:]) < 2:
            raise ConfigError(f"level-3 grid {shapes[2][2:]} is too small for localization")

    def level_shapes(self) -> list[tuple[int, int, int, int]]:
        """(C, T, h, w) of X^1..X^4."""
        dims = (self.frames, self.height, self.width)
        pad1 = tuple(k // 2 for k in self.conv1_kernel)
        dims = tuple(
            conv_output_size(n, k, s, p)
            for n, k, s, p in zip(dims, self.conv1_kernel, self.conv1_stride, pad1)
        )
        shapes = [(self.channels[0],) + dims]
        padb = tuple(k // 2 for k in self.block_kernel)
        for level, stride in enumerate(self.block_strides, start=1):
            if level == 1:
                dims = tuple((n - w) // s + 1 for n, w, s in zip(dims, self.pool_window, self.pool_stride))
            dims = tuple(
                conv_output_size(n, k, s, p)
                for n, k, s, p in zip(dims, self.block_kernel, stride, padb)
            )
            shapes.append((self.channels[level],) + dims)
        for shape in shapes:
            if min(shape[1:]) < 1:
                raise ShapeError(f"input {self.height}x{self.width} collapses to {shape}")
        return shapes


@dataclass
class VisualOutputs:
    features: list[Tensor]  # X^m, (N, C, T, h, w)
    enhanced: list[Tensor]  # (1 + M^m) * X^m
    attention: list[Tensor]  # M^m at native resolution, (N, h, w)
    saliency: list[Tensor] = field(default_factory=list)  # S^m upsampled, (N, H, W)
    activation: list[Tensor] = field(default_factory=list)  # A^m upsampled, (N, H, W)
    logits: Tensor | None = None  # S^v, (N, H, W)


def init_visual_params(cfg: BackboneConfig, rng: np.random.Generator, zero_dsam: bool = False) -> Params:
    p: Params = {}
    c_prev = 3
    for m, c in enumerate(cfg.channels, start=1):
        kernel = cfg.conv1_kernel if m == 1 else cfg.block_kernel
        p[f"visual.conv{m}.w"] = conv_weight(rng, c, c_prev, kernel)
        p[f"visual.conv{m}.b"] = zeros(c)
        if cfg.residual and m > 1:
            p[f"visual.conv{m}.skip"] = conv_weight(rng, c, c_prev, (1, 1, 1), gain=1.0)
        c_prev = c
    for m, c in enumerate(cfg.channels, start=1):
        if zero_dsam:
            p[f"visual.dsam{m}.hidden.w"] = zeros(cfg.dsam_hidden, c, 3, 3)
            p[f"visual.dsam{m}.head.w"] = zeros(2, cfg.dsam_hidden, 1, 1)
        else:
            p[f"visual.dsam{m}.hidden.w"] = conv_weight(rng, cfg.dsam_hidden, c, (3, 3))
            p[f"visual.dsam{m}.head.w"] = conv_weight(rng, 2, cfg.dsam_hidden, (1, 1), gain=1.0)
        p[f"visual.dsam{m}.hidden.b"] = zeros(cfg.dsam_hidden)
        p[f"visual.dsam{m}.head.b"] = zeros(2)
    p["visual.readout.w"] = uniform(rng, (1, N_LEVELS, 1, 1), N_LEVELS)
    p["visual.readout.b"] = zeros(1)
    return p


def spatial_softmax(activation) -> Tensor:
    """Normalize a map (last two axes) into a spatial probability distribution."""
    return T.spatial_softmax(activation)


def dsam_enhance(features, attention) -> Tensor:
    """``(1 + M) * X`` with M broadcast over channels and time.

    ``features`` is (N, C, T, h, w), (C, T, h, w), (C, h, w) or a scalar;
    ``attention`` is (N, h, w), (h, w) or a scalar.
    """
    features, attention = T.as_tensor(features), T.as_tensor(attention)
    if attention.ndim >= 2 and features.ndim >= 2:
        if attention.shape[-2:] != features.shape[-2:]:
            raise ShapeError(
                f"attention {attention.shape[-2:]} does not match features {features.shape[-2:]}"
            )
        if attention.ndim == 3:
            if features.ndim != 5 or features.shape[0] != attention.shape[0]:
                raise ShapeError("batched attention needs (N, C, T, h, w) features")
            attention = attention.reshape(attention.shape[0], 1, 1, *attention.shape[1:])
    return (1.0 + attention) * features


def as_clip_batch(clip, cfg: BackboneConfig) -> Tensor:
    """(16, H, W, 3) or (N, 16, H, W, 3) in [0, 1] -> centred (N, 3, 16, H, W)."""
    data = clip.data if isinstance(clip, Tensor) else np.asarray(clip, dtype=np.float64)
    if data.ndim == 4:
        data = data[None]
    if data.ndim != 5:
        raise ShapeError(f"clip must be (16, H, W, 3) or batched, got {data.shape}")
    n, t, h, w, c = data.shape
    if t != cfg.frames:
        raise ShapeError(f"clip has {t} frames, expected {cfg.frames}")
    if c != 3:
        raise ShapeError(f"clip has {c} colour channels, expected 3")
    if (h, w) != (cfg.height, cfg.width):
        raise ShapeError(f"clip is {h}x{w}, config expects {cfg.height}x{cfg.width}")
    return T.Tensor(np.ascontiguousarray(data.transpose(0, 4, 1, 2, 3)) - 0.5)


def _dsam(x: Tensor, p: Params, m: int, out_hw: tuple[int, int]):
    pooled = T.mean(x, axis=2)
    hidden = T.relu(T.conv(pooled, p[f"visual.dsam{m}.hidden.w"], p[f"visual.dsam{m}.hidden.b"], padding=1))
    heads = T.conv(hidden, p[f"visual.dsam{m}.head.w"], p[f"visual.dsam{m}.head.b"])
    s_map, a_map = heads[:, 0], heads[:, 1]
    attention = spatial_softmax(a_map)
    enhanced = dsam_enhance(x, attention)
    return enhanced, attention, T.upsample2d(s_map, *out_hw), T.upsample2d(a_map, *out_hw)


def visual_forward(clip, params: Params, cfg: BackboneConfig) -> VisualOutputs:
    x = as_clip_batch(clip, cfg)
    out_hw = (cfg.height, cfg.width)
    outs = VisualOutputs([], [], [])
    h = x
    for m in range(1, N_LEVELS + 1):
        w, b = params[f"visual.conv{m}.w"], params[f"visual.conv{m}.b"]
        if m == 1:
            pad = tuple(k // 2 for k in cfg.conv1_kernel)
            feat = T.relu(T.conv(h, w, b, stride=cfg.conv1_stride, padding=pad))
        else:
            if m == 2:
                h = T.pool(h, "max", cfg.pool_window, cfg.pool_stride)
            stride = cfg.block_strides[m - 2]
            pre = T.conv(h, w, b, stride=stride, padding=tuple(k // 2 for k in cfg.block_kernel))
            skip = params.get(f"visual.conv{m}.skip")
            if skip is not None:
                pre = pre + T.conv(h, skip, stride=stride)
            feat = T.relu(pre)
        enhanced, attention, s_up, a_up = _dsam(feat, params, m, out_hw)
        outs.features.append(feat)
        outs.enhanced.append(enhanced)
        outs.attention.append(attention)
        outs.saliency.append(s_up)
        outs.activation.append(a_up)
        h = enhanced
    stacked = T.stack(outs.saliency, axis=1)
    outs.logits = T.conv(stacked, params["visual.readout.w"], params["visual.readout.b"])[:, 0]
    return outs
