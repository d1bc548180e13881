"""Training/test clip generation with joint flip augmentation."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np
from scipy.ndimage import zoom

from stavis.audio import AudioSegment, crop_and_window
from stavis.data.gt import GroundTruth, default_sigma, ground_truth
from stavis.data.manifest import VideoManifest

log = logging.getLogger(__name__)

CLIP_LEN = 16
MEDIAN = 7  # lower median of a 16-frame window
CHUNK = 90


@dataclass
class ClipSample:
    clip: np.ndarray  # (16, H, W, 3) in [0, 1]
    audio: AudioSegment | None
    gt: GroundTruth  # median frame
    flipped: bool
    video_id: str
    start: int


def flip_sample(sample: ClipSample) -> ClipSample:
    """Mirror frames and ground truth left-right (column x -> W - 1 - x)."""
    gt = GroundTruth(sample.gt.y_fix[:, ::-1].copy(), sample.gt.y_den[:, ::-1].copy())
    return replace(sample, clip=sample.clip[:, :, ::-1, :].copy(), gt=gt, flipped=not sample.flipped)


def video_rng(seed: int, video_key: str, epoch: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(video_key.encode()), int(epoch)])


def chunk_bounds(n_frames: int, chunk: int = CHUNK) -> list[tuple[int, int]]:
    """Non-overlapping ``chunk``-frame segments; a trailing piece shorter than a
    clip is dropped."""
    bounds = []
    for lo in range(0, n_frames, chunk):
        hi = min(lo + chunk, n_frames)
        if hi - lo >= CLIP_LEN:
            bounds.append((lo, hi))
    return bounds


class VideoSource:
    """Frames, audio and ground truth of one video at a target resolution."""

    def __init__(self, manifest: VideoManifest, height: int | None = None, width: int | None = None,
                 sigma_px: float | None = None):
        self.manifest = manifest
        self.height = height or manifest.height
        self.width = width or manifest.width
        self.sigma = sigma_px if sigma_px is not None else default_sigma(self.height, self.width)
        self._frames: np.ndarray | None = None
        self._audio = manifest.load_audio()
        self._fix = manifest.fixations_by_frame()
        self._gt: dict[int, GroundTruth] = {}

    @property
    def n_frames(self) -> int:
        return self.manifest.n_frames

    @property
    def frames(self) -> np.ndarray:
        if self._frames is None:
            frames = self.manifest.load_frames()
            h, w = frames.shape[1:3]
            if (h, w) != (self.height, self.width):
                frames = np.clip(zoom(frames, (1, self.height / h, self.width / w, 1), order=1), 0.0, 1.0)
            self._frames = frames
        return self._frames

    def gt(self, frame: int) -> GroundTruth:
        if frame not in self._gt:
            sx = (self.width - 1) / max(self.manifest.width - 1, 1)
            sy = (self.height - 1) / max(self.manifest.height - 1, 1)
            pts = [(x * sx, y * sy) for x, y in self._fix.get(frame, [])]
            self._gt[frame] = ground_truth(pts, self.height, self.width, self.sigma)
        return self._gt[frame]

    def window(self, indices) -> np.ndarray:
        return self.frames[np.asarray(indices)]

    def audio_segment(self, center: float) -> AudioSegment | None:
        if self._audio is None:
            return None
        samples, sr = self._audio
        return crop_and_window(samples, sr, center, self.manifest.fps)

    def sample(self, start: int, flip: bool = False) -> ClipSample:
        s = ClipSample(
            clip=self.window(np.arange(start, start + CLIP_LEN)),
            audio=self.audio_segment(start + CLIP_LEN / 2),
            gt=self.gt(start + MEDIAN),
            flipped=False,
            video_id=self.manifest.video_id,
            start=start,
        )
        return flip_sample(s) if flip else s


def make_clips(
    source: VideoSource | VideoManifest,
    mode: str = "train",
    seed: int = 0,
    epoch: int = 0,
    chunk: int = CHUNK,
) -> Iterator[ClipSample]:
    """One 16-frame clip per ``chunk``-frame segment.

    Train mode draws the window start uniformly within the segment and flips
    with probability 0.5; test mode takes the centred window, unflipped.
    Windows whose median frame has no fixations are skipped.
    """
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    src = source if isinstance(source, VideoSource) else VideoSource(source)
    if src.n_frames < CLIP_LEN:
        log.warning("skipping %s: %d frames < %d", src.manifest.key, src.n_frames, CLIP_LEN)
        return
    rng = video_rng(seed, src.manifest.key, epoch)
    for lo, hi in chunk_bounds(src.n_frames, chunk):
        if mode == "train":
            start = int(rng.integers(lo, hi - CLIP_LEN + 1))
            flip = bool(rng.random() < 0.5)
        else:
            start, flip = lo + (hi - lo - CLIP_LEN) // 2, False
        if src.gt(start + MEDIAN).degenerate:
            log.debug("skipping %s@%d: no fixations on median frame", src.manifest.key, start)
            continue
        yield src.sample(start, flip)
