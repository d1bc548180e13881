"""Waveform encoder: clip-aligned cropping, Hanning weighting, seven 1-D convs, temporal max."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from stavis import tensor as T
from stavis.errors import ConfigError, ShapeError
from stavis.nn import Params, conv_weight, zeros
from stavis.tensor import Tensor, conv_output_size

CLIP_FRAMES = 16


@dataclass
class AudioSegment:
    samples: np.ndarray
    sample_rate: int
    t_start: float
    t_end: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass
class AudioNetConfig:
    # kernels, strides, paddings and pool placement follow the SoundNet front end
    channels: tuple[int, ...] = (8, 16, 32, 64, 64, 128, 64)
    kernels: tuple[int, ...] = (64, 32, 16, 8, 4, 4, 4)
    strides: tuple[int, ...] = (2, 2, 2, 2, 2, 2, 2)
    paddings: tuple[int, ...] = (32, 16, 8, 4, 2, 2, 2)
    # layer index (0-based) -> (window, stride) of the max pool after it
    pools: dict[int, tuple[int, int]] = field(default_factory=lambda: {0: (8, 1), 1: (8, 1), 4: (4, 1)})

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.kernels = tuple(int(k) for k in self.kernels)
        self.strides = tuple(int(s) for s in self.strides)
        self.paddings = tuple(int(p) for p in self.paddings)
        self.pools = {int(k): (int(v[0]), int(v[1])) for k, v in self.pools.items()}
        self.validate()

    def validate(self) -> None:
        lengths = {len(self.channels), len(self.kernels), len(self.strides), len(self.paddings)}
        if lengths != {7}:
            raise ConfigError("the audio network has exactly 7 conv layers")
        if min(self.channels) < 1 or min(self.kernels) < 1 or min(self.strides) < 1:
            raise ConfigError("audio layer sizes must be positive")
        if any(not 0 <= k < 7 for k in self.pools):
            raise ConfigError("pool positions must index conv layers 0..6")

    @property
    def out_dim(self) -> int:
        return self.channels[-1]

    def output_length(self, n: int) -> int:
        for i in range(7):
            n = conv_output_size(n, self.kernels[i], self.strides[i], self.paddings[i])
            if i in self.pools and n >= 1:
                w, s = self.pools[i]
                n = (n - w) // s + 1
            if n < 1:
                return 0
        return n

    def min_length(self) -> int:
        lo, hi = 1, 1
        while self.output_length(hi) < 1:
            hi *= 2
        while lo < hi:
            mid = (lo + hi) // 2
            if self.output_length(mid) >= 1:
                hi = mid
            else:
                lo = mid + 1
        return lo


def hanning(n: int) -> np.ndarray:
    """``0.5 * (1 - cos(2 pi k / (n - 1)))``, mirrored so it is exactly symmetric."""
    if n < 1:
        raise ValueError("window length must be positive")
    if n == 1:
        return np.ones(1)
    k = np.arange((n + 1) // 2)
    half = 0.5 * (1.0 - np.cos(2.0 * np.pi * k / (n - 1)))
    return np.concatenate([half, half[: n // 2][::-1]])


def to_mono(samples) -> np.ndarray:
    """Average channels of a (n_samples, n_channels) track."""
    a = np.asarray(samples, dtype=np.float64)
    return a.mean(axis=1) if a.ndim == 2 else a


def segment_length(sample_rate: float, fps: float, n_frames: int = CLIP_FRAMES) -> int:
    return int(round(n_frames * sample_rate / fps))


def crop_and_window(
    track,
    sample_rate: int,
    clip_center: float,
    fps: float,
    n_frames: int = CLIP_FRAMES,
) -> AudioSegment:
    """Cut the ``n_frames``-long span centred on frame position ``clip_center``.

    The span covers frames ``[clip_center - n/2, clip_center + n/2)`` in time.
    Parts outside the track are zero. The result is Hanning-weighted.
    """
    track = to_mono(track)
    if track.size == 0:
        raise ValueError("empty audio track")
    if fps <= 0:
        raise ValueError("fps must be positive")
    length = segment_length(sample_rate, fps, n_frames)
    start = int(round((clip_center - n_frames / 2) * sample_rate / fps))
    seg = np.zeros(length)
    lo, hi = max(start, 0), min(start + length, track.size)
    if hi > lo:
        seg[lo - start: hi - start] = track[lo:hi]
    t0 = start / sample_rate
    return AudioSegment(seg * hanning(length), int(sample_rate), t0, t0 + length / sample_rate)


def init_audio_params(cfg: AudioNetConfig, rng: np.random.Generator) -> Params:
    p: Params = {}
    c_prev = 1
    for i, (c, k) in enumerate(zip(cfg.channels, cfg.kernels), start=1):
        gain = np.sqrt(2.0) if i < 7 else 1.0
        p[f"audio.conv{i}.w"] = conv_weight(rng, c, c_prev, (k,), gain=gain)
        p[f"audio.conv{i}.b"] = zeros(c)
        c_prev = c
    return p


def _as_wave_batch(segment, cfg: AudioNetConfig) -> np.ndarray:
    if isinstance(segment, AudioSegment):
        data = segment.samples
    elif isinstance(segment, Tensor):
        data = segment.data
    else:
        data = np.asarray(segment, dtype=np.float64)
    if data.ndim == 1:
        data = data[None]
    if data.ndim != 2:
        raise ShapeError(f"audio must be (L,) or (N, L), got {data.shape}")
    need = cfg.min_length()
    if data.shape[1] < need:
        warnings.warn(f"audio segment of {data.shape[1]} samples zero-padded to {need}", stacklevel=3)
        data = np.pad(data, ((0, 0), (0, need - data.shape[1])))
    return data[:, None, :]


def audio_forward(segment, params: Params, cfg: AudioNetConfig) -> Tensor:
    """Embed a waveform (or a batch of equal-length waveforms) into ``f_a``.

    Returns shape (D_a,) for a single segment and (N, D_a) for a batch.
    """
    single = isinstance(segment, AudioSegment) or np.ndim(
        segment.data if isinstance(segment, Tensor) else segment
    ) == 1
    last = params["audio.conv7.w"]
    if last.shape[0] != cfg.out_dim:
        raise ShapeError(f"audio params give D_a={last.shape[0]}, config says {cfg.out_dim}")
    h = T.Tensor(_as_wave_batch(segment, cfg))
    for i in range(7):
        h = T.conv(
            h,
            params[f"audio.conv{i + 1}.w"],
            params[f"audio.conv{i + 1}.b"],
            stride=cfg.strides[i],
            padding=cfg.paddings[i],
        )
        if i < 6:
            h = T.relu(h)
        if i in cfg.pools:
            window, stride = cfg.pools[i]
            h = T.pool(h, "max", (window,), (stride,))
    f_a = T.pool(h, "max", (h.shape[-1],))
    f_a = f_a.reshape(f_a.shape[0], f_a.shape[1])
    return f_a[0] if single else f_a
