"""Synthetic motion blur: random-walk camera trajectories rasterized to PSFs.

Three severity levels differ in maximum kernel size, heading noise (how far
the motion departs from a straight line) and trajectory sample count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels

ARC_STEP = 0.1  # px between splatted samples along the trajectory


@dataclass(frozen=True)
class BlurLevel:
    name: str
    max_kernel: int
    curvature: float
    steps: int
    min_extent_frac: float = 0.6


EASY = BlurLevel("EASY", 9, 0.1, 32)
HARD = BlurLevel("HARD", 17, 0.3, 64)
TOUGH = BlurLevel("TOUGH", 25, 0.6, 96)
LEVELS = {"easy": EASY, "hard": HARD, "tough": TOUGH}


def get_level(name):
    try:
        return LEVELS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown blur level {name!r}; expected one of {sorted(LEVELS)}") from None


@dataclass(frozen=True)
class BlurKernel:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ValueError(f"blur kernel must be odd and square, got {w.shape}")
        if (w < 0).any():
            raise ValueError("blur kernel has negative weights")
        object.__setattr__(self, "weights", w)

    @property
    def k(self):
        return self.weights.shape[0]

    def center_of_mass(self):
        ys, xs = np.mgrid[0:self.k, 0:self.k]
        total = self.weights.sum()
        return float((xs * self.weights).sum() / total), float((ys * self.weights).sum() / total)


def _arc_samples(traj):
    """Midpoints of equal sub-intervals along every segment, weighted by arc length."""
    traj = np.asarray(traj, dtype=np.float64).reshape(-1, 2)
    if len(traj) == 1:
        return traj.copy(), np.ones(1)
    pts, wts = [], []
    for a, b in zip(traj[:-1], traj[1:]):
        length = float(np.hypot(*(b - a)))
        if length == 0.0:
            continue
        n = max(1, math.ceil(length / ARC_STEP))
        t = (np.arange(n) + 0.5) / n
        pts.append(a + t[:, None] * (b - a))
        wts.append(np.full(n, length / n))
    if not pts:
        return traj[:1].copy(), np.ones(1)
    return np.concatenate(pts), np.concatenate(wts)


def sample_trajectory(rng, level):
    """Random-walk polyline centred on its arc-length centroid.

    The heading starts uniformly at random and each step adds Gaussian noise
    with std ``level.curvature``. The walk is scaled to a random extent in
    ``[min_extent_frac, 1]`` of what the level's largest kernel can hold
    (extent at most ``max_kernel - 2``).
    """
    n = level.steps
    if n <= 1:
        return np.zeros((1, 2))
    heading = rng.uniform(0.0, 2.0 * math.pi) + np.concatenate(
        [[0.0], np.cumsum(rng.normal(0.0, level.curvature, size=n - 2))])
    steps = np.stack([np.cos(heading), np.sin(heading)], axis=1)
    traj = np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)])
    pts, wts = _arc_samples(traj)
    traj = traj - (pts * wts[:, None]).sum(axis=0) / wts.sum()
    # radius limit keeps bilinear neighbours inside the largest kernel
    radius = float(np.abs(traj).max())
    extent = float((traj.max(axis=0) - traj.min(axis=0)).max())
    limit = min((level.max_kernel - 2) / max(extent, 1e-12), (level.max_kernel - 3) / 2 / max(radius, 1e-12))
    return traj * limit * rng.uniform(level.min_extent_frac, 1.0)


def kernel_size_for(traj, max_kernel=None):
    """Smallest odd side holding the trajectory with a one-pixel bilinear margin."""
    radius = float(np.abs(np.asarray(traj)).max()) if np.size(traj) else 0.0
    k = 2 * math.ceil(radius) + 3 if radius > 0 else 1
    if max_kernel is not None:
        k = min(k, max_kernel if max_kernel % 2 else max_kernel - 1)
    return k


def rasterize_psf(traj, k):
    """Splat the polyline into a k x k kernel (bilinear, uniform arc length), normalized to 1."""
    if k % 2 == 0 or k < 1:
        raise ValueError(f"kernel side must be odd and positive, got {k}")
    pts, wts = _arc_samples(traj)
    w = kernels.splat_bilinear(pts[:, 0], pts[:, 1], wts, k)
    return BlurKernel(w / w.sum())


def blur_linear(image, kern):
    """2-D correlation with reflected borders, no clamping."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        return np.stack([blur_linear(img[..., c], kern) for c in range(img.shape[2])], axis=2)
    return ndimage.correlate(img, kern.weights, mode="reflect")


def apply_blur(image, kern):
    return np.clip(blur_linear(image, kern), 0.0, 1.0)


def sample_kernel(rng, level):
    traj = sample_trajectory(rng, level)
    return rasterize_psf(traj, kernel_size_for(traj, level.max_kernel))


def synth_pair(sharp, level, rng):
    """Blur ``sharp`` with a freshly sampled kernel of the given level."""
    kern = sample_kernel(rng, level)
    return apply_blur(sharp, kern), kern
