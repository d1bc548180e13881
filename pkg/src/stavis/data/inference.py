"""Per-frame prediction with a step-1 sliding window."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from stavis.data.clips import CLIP_LEN, MEDIAN, VideoSource


class Predictor(Protocol):
    def predict(self, clips: np.ndarray, audio: np.ndarray | None) -> np.ndarray:
        """(N, 16, H, W, 3) clips and (N, L) audio -> (N, H, W) maps."""


@dataclass
class SaliencyPrediction:
    frame_idx: int
    map: np.ndarray
    variant: str


def window_indices(t: int, n_frames: int) -> np.ndarray:
    """Frames feeding the window whose median frame is ``t``; clamped at the ends."""
    return np.clip(np.arange(t - MEDIAN, t - MEDIAN + CLIP_LEN), 0, n_frames - 1)


def sliding_window_predict(
    model: Predictor,
    source: VideoSource,
    batch_size: int = 8,
    variant: str = "av",
) -> list[SaliencyPrediction]:
    """One map per frame, from the window centred (lower median) on it. No flipping."""
    n = source.n_frames
    out: list[SaliencyPrediction] = []
    for lo in range(0, n, batch_size):
        ts = list(range(lo, min(lo + batch_size, n)))
        clips = np.stack([source.window(window_indices(t, n)) for t in ts])
        segments = [source.audio_segment(t - MEDIAN + CLIP_LEN / 2) for t in ts]
        audio = None if segments[0] is None else np.stack([s.samples for s in segments])
        maps = model.predict(clips, audio)
        out.extend(SaliencyPrediction(t, m, variant) for t, m in zip(ts, maps))
    return out
