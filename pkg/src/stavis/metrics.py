"""Saliency evaluation metrics: CC, NSS, AUC-Judd, shuffled AUC, SIM.

All functions take plain arrays. A metric that is undefined for its input
raises :class:`~stavis.errors.DegenerateError`; :func:`evaluate_video` turns
those into excluded, tallied frames.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from stavis.errors import DegenerateError, ShapeError

METRICS = ("cc", "nss", "auc_j", "sauc", "sim")
STD_FLOOR = 1e-8


def _pair(p, y) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"prediction {p.shape} vs ground truth {y.shape}")
    return p, y


def metric_cc(p, y_den) -> float:
    p, y = _pair(p, y_den)
    pc, yc = p - p.mean(), y - y.mean()
    sp, sy = np.sqrt((pc * pc).mean()), np.sqrt((yc * yc).mean())
    if sp <= STD_FLOOR or sy <= STD_FLOOR:
        raise DegenerateError("correlation of a constant map is undefined")
    return float((pc * yc).mean() / (sp * sy))


def metric_nss(p, y_fix) -> float:
    p, fix = _pair(p, y_fix)
    n_fix = fix.sum()
    if n_fix < 1:
        raise DegenerateError("NSS needs at least one fixation")
    pc = p - p.mean()
    sp = np.sqrt((pc * pc).mean())
    if sp <= STD_FLOOR:
        raise DegenerateError("NSS of a constant map is undefined")
    return float(((pc / sp) * fix).sum() / n_fix)


def _roc_area(pos: np.ndarray, neg: np.ndarray, thresholds: np.ndarray) -> float:
    """Trapezoidal area under the ROC traced by ``score >= t`` for descending t,
    anchored at (0, 0) and (1, 1)."""
    pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
    t = np.sort(np.unique(thresholds))[::-1]
    tp = (pos.size - np.searchsorted(pos_sorted, t, side="left")) / pos.size
    fp = (neg.size - np.searchsorted(neg_sorted, t, side="left")) / neg.size
    tp = np.concatenate([[0.0], tp, [1.0]])
    fp = np.concatenate([[0.0], fp, [1.0]])
    return float(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1]) / 2.0))


def metric_auc_judd(p, y_fix) -> float:
    """Positives: fixated pixels. Negatives: every other pixel. Thresholds: the
    distinct prediction values at fixations."""
    p, fix = _pair(p, y_fix)
    mask = fix > 0
    if not mask.any():
        raise DegenerateError("AUC needs at least one fixation")
    if mask.all():
        raise DegenerateError("AUC-Judd needs at least one non-fixated pixel")
    pos, neg = p[mask], p[~mask]
    return _roc_area(pos, neg, pos)


def metric_sauc(p, y_fix, other_fixations) -> float:
    """Positives: current fixations. Negatives: pixels fixated in other frames,
    minus the current positives. Thresholds: every distinct score among both
    sets, so the area equals the pairwise win rate with half credit for ties."""
    p, fix = _pair(p, y_fix)
    other = np.asarray(other_fixations)
    if other.shape != p.shape:
        raise ShapeError(f"negative map {other.shape} vs prediction {p.shape}")
    pos_mask = fix > 0
    neg_mask = (other > 0) & ~pos_mask
    if not pos_mask.any():
        raise DegenerateError("sAUC needs at least one fixation")
    if not neg_mask.any():
        raise DegenerateError("sAUC negative set is empty")
    pos, neg = p[pos_mask], p[neg_mask]
    return _roc_area(pos, neg, np.concatenate([pos, neg]))


def metric_sim(p, y_den) -> float:
    p, y = _pair(p, y_den)
    sp, sy = p.sum(), y.sum()
    if sp <= 0 or sy <= 0:
        raise DegenerateError("SIM needs maps with positive mass")
    return float(np.minimum(p / sp, y / sy).sum())


def other_frame_union(fixation_maps: Sequence[np.ndarray]) -> list[np.ndarray]:
    """For each frame, the union of fixations over all other frames."""
    stack = np.asarray(fixation_maps) > 0
    counts = stack.sum(axis=0)
    return [(counts - s) > 0 for s in stack]


@dataclass
class MetricReport:
    video_id: str
    per_frame: dict[str, list[float]] = field(default_factory=lambda: {m: [] for m in METRICS})
    degenerate: dict[str, int] = field(default_factory=lambda: {m: 0 for m in METRICS})

    @property
    def n_frames(self) -> int:
        return len(self.per_frame["cc"])

    def mean(self, metric: str) -> float:
        vals = [v for v in self.per_frame[metric] if not math.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    def means(self) -> dict[str, float]:
        return {m: self.mean(m) for m in METRICS}

    def frame_degenerate(self, i: int) -> bool:
        return any(math.isnan(self.per_frame[m][i]) for m in METRICS)


def score_frame(pred, y_fix, y_den, negatives) -> dict[str, float]:
    """All five metrics for one frame; undefined ones come back as NaN."""
    calls = {
        "cc": lambda: metric_cc(pred, y_den),
        "nss": lambda: metric_nss(pred, y_fix),
        "auc_j": lambda: metric_auc_judd(pred, y_fix),
        "sauc": lambda: metric_sauc(pred, y_fix, negatives),
        "sim": lambda: metric_sim(pred, y_den),
    }
    out = {}
    for name, fn in calls.items():
        try:
            out[name] = fn()
        except DegenerateError:
            out[name] = float("nan")
    return out


def evaluate_video(
    predictions: Sequence[np.ndarray],
    fixation_maps: Sequence[np.ndarray],
    dense_maps: Sequence[np.ndarray],
    extra_negatives: np.ndarray | None = None,
    video_id: str = "",
) -> MetricReport:
    """Score every frame; sAUC negatives are the other frames' fixations
    (optionally OR-ed with ``extra_negatives``, e.g. other videos)."""
    if not len(predictions) == len(fixation_maps) == len(dense_maps):
        raise ShapeError(
            f"{len(predictions)} predictions, {len(fixation_maps)} fixation maps, {len(dense_maps)} dense maps"
        )
    report = MetricReport(video_id)
    unions = other_frame_union(fixation_maps) if len(fixation_maps) else []
    for i, (pred, fix, den) in enumerate(zip(predictions, fixation_maps, dense_maps)):
        negatives = unions[i] if extra_negatives is None else unions[i] | (np.asarray(extra_negatives) > 0)
        scores = score_frame(pred, fix, den, negatives)
        for name, value in scores.items():
            report.per_frame[name].append(value)
            if math.isnan(value):
                report.degenerate[name] += 1
    return report


def write_report_csv(reports: Sequence[MetricReport], path) -> None:
    """One row per frame plus a ``mean`` row per video."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "frame_idx", *METRICS, "degenerate_flag"])
        for rep in reports:
            for i in range(rep.n_frames):
                w.writerow(
                    [rep.video_id, i]
                    + [repr(rep.per_frame[m][i]) for m in METRICS]
                    + [int(rep.frame_degenerate(i))]
                )
            w.writerow(
                [rep.video_id, "mean"]
                + [repr(rep.mean(m)) for m in METRICS]
                + [sum(rep.frame_degenerate(i) for i in range(rep.n_frames))]
            )


def write_nss_series(path, video_id: str, nss_visual: Sequence[float], nss_av: Sequence[float]) -> None:
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["video_id", "frame_idx", "nss_visual", "nss_av"])
        for i, (a, b) in enumerate(zip(nss_visual, nss_av)):
            w.writerow([video_id, i, repr(float(a)), repr(float(b))])
