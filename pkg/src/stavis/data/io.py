"""File formats: 8-bit PGM maps, raw float64 tensors, WAV audio, PNG frames,
fixation CSV sidecars."""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.io import wavfile

from stavis.serialize import read_raw, write_raw

__all__ = [
    "read_pgm",
    "write_pgm",
    "read_raw",
    "write_raw",
    "read_wav",
    "write_wav",
    "read_frames",
    "write_frames",
    "read_fixations",
    "write_fixations",
]

_PGM_HEADER = re.compile(rb"\AP5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def quantize(values) -> np.ndarray:
    """[0, 1] -> 0..255 with round-half-up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, values) -> None:
    """Write a (H, W) map with values in [0, 1] as binary 8-bit PGM."""
    v = np.asarray(values)
    if v.ndim != 2:
        raise ValueError(f"PGM needs a 2-D map, got shape {v.shape}")
    h, w = v.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + quantize(v).tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    m = _PGM_HEADER.match(buf)
    if m is None:
        raise ValueError(f"{path}: malformed PGM header")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255 or w < 1 or h < 1:
        raise ValueError(f"{path}: unsupported PGM ({w}x{h}, maxval {maxval})")
    data = buf[m.end():]
    if len(data) < w * h:
        raise ValueError(f"{path}: truncated PGM data ({len(data)} of {w * h} bytes)")
    return np.frombuffer(data[: w * h], dtype=np.uint8).reshape(h, w) / 255.0


def read_wav(path) -> tuple[np.ndarray, int]:
    """PCM-16 or float32 WAV -> (mono float64 samples, sample rate)."""
    sr, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV sample type {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return samples, int(sr)


def write_wav(path, samples, sample_rate: int) -> None:
    """Write PCM-16; values are scaled by 32768 and clipped to the int16 range."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), int(sample_rate), pcm)


def write_frames(directory, frames) -> None:
    """(F, H, W, 3) frames in [0, 1] or uint8 -> frame_00000.png, ..."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(frames)
    if arr.dtype != np.uint8:
        arr = quantize(arr)
    for i, frame in enumerate(arr):
        Image.fromarray(frame, mode="RGB").save(d / f"frame_{i:05d}.png", optimize=False)


def read_frames(path) -> np.ndarray:
    """PNG directory or raw tensor file -> (F, H, W, 3) float64 in [0, 1]."""
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.png"))
        if not files:
            raise ValueError(f"{p}: no PNG frames")
        return np.stack([np.asarray(Image.open(f).convert("RGB"), dtype=np.float64) / 255.0 for f in files])
    frames = read_raw(p)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValueError(f"{p}: raw frames must be (F, H, W, 3), got {frames.shape}")
    return frames


def read_fixations(path) -> list[tuple[int, int, float, float]]:
    """CSV with header ``frame,viewer,x,y``."""
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"frame", "viewer", "x", "y"}:
            raise ValueError(f"{path}: fixation CSV needs columns frame,viewer,x,y")
        for r in reader:
            rows.append((int(r["frame"]), int(r["viewer"]), float(r["x"]), float(r["y"])))
    return rows


def write_fixations(path, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "viewer", "x", "y"])
        for frame, viewer, x, y in rows:
            w.writerow([int(frame), int(viewer), repr(float(x)), repr(float(y))])
