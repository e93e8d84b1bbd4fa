from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Keypoint:
    """Image location (x = column, y = row, origin top-left) with a score."""

    x: float
    y: float
    score: float = 1.0


def to_array(kpts):
    """List of keypoints -> N x 3 float64 array of (x, y, score)."""
    if len(kpts) == 0:
        return np.zeros((0, 3))
    return np.array([(k.x, k.y, k.score) for k in kpts], dtype=np.float64)


def from_array(arr):
    return [Keypoint(float(x), float(y), float(s)) for x, y, s in np.asarray(arr).reshape(-1, 3)]


def sort_by_score(kpts):
    """Descending score; ties broken by smaller y, then smaller x."""
    return sorted(kpts, key=lambda k: (-k.score, k.y, k.x))
