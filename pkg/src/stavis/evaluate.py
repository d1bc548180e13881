"""Per-video evaluation: sliding-window prediction followed by all metrics."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from stavis.data import io
from stavis.data.clips import VideoSource
from stavis.data.inference import Predictor, sliding_window_predict
from stavis.metrics import METRICS, MetricReport, evaluate_video, write_report_csv


def evaluate_source(model: Predictor, source: VideoSource, batch_size: int = 8, variant: str = "av",
                    frames: Sequence[int] | None = None):
    """Score one video; returns the report and the predicted maps."""
    preds = sliding_window_predict(model, source, batch_size, variant)
    idx = range(source.n_frames) if frames is None else frames
    maps = [preds[i].map for i in idx]
    gts = [source.gt(i) for i in idx]
    report = evaluate_video(maps, [g.y_fix for g in gts], [g.y_den for g in gts], video_id=source.manifest.video_id)
    return report, maps


def mean_metrics(reports: Sequence[MetricReport]) -> dict[str, float]:
    """Mean over all non-degenerate frames of all videos."""
    out = {}
    for m in METRICS:
        vals = np.array([v for r in reports for v in r.per_frame[m]], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        out[m] = float(vals.mean()) if vals.size else float("nan")
    return out


def evaluate_sources(model: Predictor, sources: Sequence[VideoSource], batch_size: int = 8, variant: str = "av",
                     out_dir=None, save_maps: bool = False) -> list[MetricReport]:
    reports = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for src in sources:
        report, maps = evaluate_source(model, src, batch_size, variant)
        reports.append(report)
        if out is not None and save_maps:
            vdir = out / "maps" / variant / src.manifest.video_id
            vdir.mkdir(parents=True, exist_ok=True)
            for i, m in enumerate(maps):
                io.write_pgm(vdir / f"{i:05d}.pgm", m / max(float(m.max()), 1e-12))
    if out is not None:
        write_report_csv(reports, out / f"metrics_{variant}.csv")
    return reports
