"""Synthetic audiovisual saliency videos.

Each video shows two identical bright Gaussian blobs on a noisy dark
background. One blob oscillates horizontally, the other vertically. A pure
tone plays throughout; its pitch names the motion pattern of the "sounding"
blob (low: horizontal, high: vertical), which is picked at random per video.
With ``audio_cue`` every viewer fixates the sounding blob; without it the
tone is uninformative and viewers split evenly between the blobs. Frames
alone never reveal which blob sounds.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from stavis.data import io
from stavis.data.manifest import VideoManifest, save_manifest

TONE_HZ = {0: 440.0, 1: 1320.0}
NEUTRAL_HZ = 880.0


def _quantize_audio(x: np.ndarray) -> np.ndarray:
    # match a PCM-16 round trip so in-memory and on-disk datasets agree
    return np.clip(np.round(x * 32768.0), -32768, 32767) / 32768.0


def blob_positions(meta: dict, t: np.ndarray) -> np.ndarray:
    """(2, len(t), 2) array of (x, y) blob centres at frame times ``t / fps``."""
    time = np.asarray(t, dtype=np.float64) / meta["fps"]
    out = np.empty((2, time.size, 2))
    for b, (cx, cy) in enumerate(meta["centers"]):
        offset = meta["amplitude"] * np.sin(2 * np.pi * meta["freq"] * time + meta["phase"][b])
        out[b, :, 0] = cx + (offset if b == 0 else 0.0)
        out[b, :, 1] = cy + (offset if b == 1 else 0.0)
    return out


def _render(meta: dict, n_frames: int, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    pos = blob_positions(meta, np.arange(n_frames))
    sigma = meta["blob_sigma"]
    frames = np.empty((n_frames, size, size, 3))
    for t in range(n_frames):
        img = 0.15 + 0.03 * rng.standard_normal((size, size))
        for b in range(2):
            x, y = pos[b, t]
            img = img + 0.75 * np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2 * sigma**2))
        frames[t] = np.clip(img, 0.0, 1.0)[..., None]
    return np.floor(frames * 255.0 + 0.5).astype(np.uint8)


def synth_video(
    seed: int,
    index: int,
    audio_cue: bool = True,
    n_frames: int = 90,
    size: int = 64,
    fps: float = 25.0,
    sample_rate: int = 8000,
    n_viewers: int = 8,
    dataset: str = "synth",
    amplitude: float = 0.09,
    motion_hz: float = 1.5,
) -> VideoManifest:
    """One synthetic video; ``amplitude`` is the oscillation amplitude as a fraction of ``size``."""
    rng = np.random.default_rng([int(seed), int(index), 7])
    sigma = 0.06 * size
    amplitude = amplitude * size
    margin = amplitude + 2.5 * sigma
    lo, hi = margin, size - 1 - margin
    while True:
        centers = rng.uniform(lo, hi, size=(2, 2))
        if np.hypot(*(centers[0] - centers[1])) >= 0.4 * size:
            break
    sounding = int(rng.integers(2))
    meta = {
        "fps": fps,
        "centers": centers.tolist(),
        "amplitude": amplitude,
        "freq": float(motion_hz),
        "phase": rng.uniform(0, 2 * np.pi, size=2).tolist(),
        "blob_sigma": sigma,
        "sounding": sounding,
        "audio_cue": bool(audio_cue),
    }
    frames = _render(meta, n_frames, size, rng)
    n_samples = int(round(n_frames * sample_rate / fps))
    tone = TONE_HZ[sounding] if audio_cue else NEUTRAL_HZ
    t = np.arange(n_samples) / sample_rate
    audio = _quantize_audio(0.5 * np.sin(2 * np.pi * tone * t + rng.uniform(0, 2 * np.pi)))

    pos = blob_positions(meta, np.arange(n_frames))
    fix_sigma = sigma / 2
    fixations = []
    for f in range(n_frames):
        for v in range(n_viewers):
            target = sounding if audio_cue else v % 2
            x, y = pos[target, f] + fix_sigma * rng.standard_normal(2)
            fixations.append((f, v, float(np.clip(x, 0, size - 1)), float(np.clip(y, 0, size - 1))))
    return VideoManifest(
        video_id=f"v{index:03d}",
        dataset=dataset,
        fps=fps,
        n_frames=n_frames,
        height=size,
        width=size,
        fixations=fixations,
        frame_data=frames,
        audio_data=audio,
        sample_rate=sample_rate,
        meta=meta,
    )


def synth_dataset(seed: int, n_videos: int, audio_cue: bool = True, start_index: int = 0, **kwargs) -> list[VideoManifest]:
    return [synth_video(seed, start_index + i, audio_cue, **kwargs) for i in range(n_videos)]


def write_dataset(videos: list[VideoManifest], out_dir) -> Path:
    """Write frames (PNG), audio (WAV), fixations (CSV) and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for v in videos:
        vdir = out / v.video_id
        io.write_frames(vdir / "frames", v.frame_data)
        io.write_wav(vdir / "audio.wav", v.audio_data, v.sample_rate)
        io.write_fixations(vdir / "fixations.csv", v.fixations)
        v.frames_path = f"{v.video_id}/frames"
        v.audio_path = f"{v.video_id}/audio.wav"
        v.fixations_path = f"{v.video_id}/fixations.csv"
    path = out / "manifest.json"
    save_manifest(path, videos)
    return path
