"""Ground-truth maps built from eye-tracking fixations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.ndimage import gaussian_filter

SIGMA_FRACTION = 0.035
TRUNCATE = 4.0


@dataclass
class GroundTruth:
    y_fix: np.ndarray  # binary (H, W)
    y_den: np.ndarray  # [0, 1] (H, W), peak 1 unless degenerate

    @property
    def n_fix(self) -> int:
        return int(self.y_fix.sum())

    @property
    def degenerate(self) -> bool:
        return self.n_fix == 0


def default_sigma(height: int, width: int) -> float:
    return SIGMA_FRACTION * max(height, width)


def fixation_map(points: Iterable[tuple[float, float]], height: int, width: int) -> np.ndarray:
    """Binary map with a one at each rounded (x, y) location inside the frame."""
    fix = np.zeros((height, width))
    for x, y in points:
        col, row = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
        if 0 <= row < height and 0 <= col < width:
            fix[row, col] = 1.0
    return fix


def densify_fixations(y_fix, sigma_px: float) -> np.ndarray:
    """Gaussian blur (truncated at 4 sigma, mirrored borders) normalized to peak 1.

    An empty fixation map gives an all-zero map.
    """
    if sigma_px <= 0:
        raise ValueError("sigma must be positive")
    fix = np.asarray(y_fix, dtype=np.float64)
    if not fix.any():
        return np.zeros_like(fix)
    dense = gaussian_filter(fix, sigma_px, mode="reflect", truncate=TRUNCATE)
    return dense / dense.max()


def ground_truth(points, height: int, width: int, sigma_px: float | None = None) -> GroundTruth:
    fix = fixation_map(points, height, width)
    sigma = default_sigma(height, width) if sigma_px is None else sigma_px
    return GroundTruth(fix, densify_fixations(fix, sigma))
