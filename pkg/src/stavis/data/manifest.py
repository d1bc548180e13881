"""Video manifests.

A manifest is a JSON file per dataset::

    {"dataset": "avad",
     "videos": [{"video_id": "v01", "fps": 25.0, "n_frames": 180,
                 "height": 64, "width": 64,
                 "frames": "v01/frames",        # PNG directory or raw tensor file
                 "audio": "v01/audio.wav",      # optional
                 "fixations": "v01/fix.csv"}]}  # frame,viewer,x,y

Relative paths resolve against the data root: the ``root`` argument, else the
``STAVIS_DATA_ROOT`` environment variable, else the manifest's directory.
"""

from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from stavis.data import io

ENV_ROOT = "STAVIS_DATA_ROOT"


@dataclass
class VideoManifest:
    video_id: str
    dataset: str
    fps: float
    n_frames: int
    height: int
    width: int
    fixations: list[tuple[int, int, float, float]] = field(default_factory=list)
    frames_path: str | None = None
    audio_path: str | None = None
    fixations_path: str | None = None
    root: Path | None = None
    # in-memory content (synthetic data, tests); takes precedence over paths
    frame_data: np.ndarray | None = field(default=None, repr=False)
    audio_data: np.ndarray | None = field(default=None, repr=False)
    sample_rate: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def key(self) -> str:
        return f"{self.dataset}/{self.video_id}"

    def validate(self) -> None:
        if self.fps <= 0:
            raise ValueError(f"{self.key}: fps must be positive")
        if self.n_frames < 1:
            raise ValueError(f"{self.key}: no frames")
        for frame, _, x, y in self.fixations:
            if not (0 <= frame < self.n_frames):
                raise ValueError(f"{self.key}: fixation frame {frame} out of range")
            if not (0 <= x <= self.width - 1 and 0 <= y <= self.height - 1):
                raise ValueError(f"{self.key}: fixation ({x}, {y}) outside {self.width}x{self.height}")

    def _resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() or self.root is None else self.root / p

    def load_frames(self) -> np.ndarray:
        """(F, H, W, 3) float64 in [0, 1]."""
        if self.frame_data is not None:
            data = self.frame_data
            return data / 255.0 if data.dtype == np.uint8 else np.asarray(data, dtype=np.float64)
        if self.frames_path is None:
            raise ValueError(f"{self.key}: no frames")
        frames = io.read_frames(self._resolve(self.frames_path))
        if frames.shape[0] != self.n_frames:
            raise ValueError(f"{self.key}: manifest says {self.n_frames} frames, found {frames.shape[0]}")
        return frames

    def load_audio(self) -> tuple[np.ndarray, int] | None:
        if self.audio_data is not None:
            return np.asarray(self.audio_data, dtype=np.float64), int(self.sample_rate)
        if self.audio_path is None:
            return None
        return io.read_wav(self._resolve(self.audio_path))

    def fixations_by_frame(self) -> dict[int, list[tuple[float, float]]]:
        out: dict[int, list[tuple[float, float]]] = defaultdict(list)
        for frame, _, x, y in self.fixations:
            out[frame].append((x, y))
        return out

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "fps": self.fps,
            "n_frames": self.n_frames,
            "height": self.height,
            "width": self.width,
            "frames": self.frames_path,
            "audio": self.audio_path,
            "fixations": self.fixations_path,
            "meta": self.meta,
        }


def data_root(explicit=None, manifest_path=None) -> Path | None:
    if explicit:
        return Path(explicit)
    if os.environ.get(ENV_ROOT):
        return Path(os.environ[ENV_ROOT])
    return Path(manifest_path).parent if manifest_path else None


def load_manifest(path, root=None) -> list[VideoManifest]:
    path = Path(path)
    doc = json.loads(path.read_text())
    base = data_root(root, path)
    dataset = doc["dataset"]
    videos = []
    for entry in doc["videos"]:
        fix_rel = entry.get("fixations")
        fixations = []
        if fix_rel:
            p = Path(fix_rel)
            fixations = io.read_fixations(p if p.is_absolute() or base is None else base / p)
        videos.append(
            VideoManifest(
                video_id=entry["video_id"],
                dataset=dataset,
                fps=float(entry["fps"]),
                n_frames=int(entry["n_frames"]),
                height=int(entry["height"]),
                width=int(entry["width"]),
                fixations=fixations,
                frames_path=entry.get("frames"),
                audio_path=entry.get("audio"),
                fixations_path=fix_rel,
                root=base,
                meta=entry.get("meta", {}),
            )
        )
    return videos


def save_manifest(path, videos: list[VideoManifest]) -> None:
    datasets = {v.dataset for v in videos}
    if len(datasets) != 1:
        raise ValueError(f"a manifest holds one dataset, got {sorted(datasets)}")
    doc = {"dataset": datasets.pop(), "videos": [v.to_json() for v in videos]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
