"""Synthetic images with corners known by construction, plus random view homographies.

Each image is a grid of tiles, each holding one filled convex polygon
(triangle or sheared quadrilateral) on a shaded background. Polygon vertices
are the ground-truth keypoints. Rendering is 4x supersampled for
anti-aliased edges.
"""

from __future__ import annotations

import math

import numpy as np

from .blursynth import synth_pair
from .evalkit import Homography
from .keypoint import Keypoint

SUPERSAMPLE = 4
MIN_CONTRAST = 0.3


def _convex_mask(poly, xs, ys):
    """Inside test for a counter-clockwise convex polygon (in y-down pixel coords)."""
    inside = np.ones(xs.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        (x0, y0), (x1, y1) = poly[i], poly[(i + 1) % n]
        inside &= (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0) >= 0
    return inside


def _orient(poly):
    p = np.asarray(poly, dtype=np.float64)
    area = 0.5 * np.sum(p[:, 0] * np.roll(p[:, 1], -1) - np.roll(p[:, 0], -1) * p[:, 1])
    return p if area > 0 else p[::-1]


def _angles_ok(poly, lo=30.0, hi=125.0):
    n = len(poly)
    for i in range(n):
        a = poly[i - 1] - poly[i]
        b = poly[(i + 1) % n] - poly[i]
        cos = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
        ang = math.degrees(math.acos(np.clip(cos, -1.0, 1.0)))
        if not lo <= ang <= hi:
            return False
    return True


def _random_polygon(rng, tile, margin):
    """Convex polygon inside a ``tile`` square (local coordinates), vertices >= ``margin`` from edges."""
    c = tile / 2.0
    span = tile / 2.0 - margin
    for _ in range(100):
        if rng.random() < 0.5:
            ang = rng.uniform(0, 2 * math.pi) + np.sort(rng.uniform(0, 2 * math.pi, 3))
            rad = rng.uniform(0.7, 1.0, 3) * span
            poly = np.stack([c + rad * np.cos(ang), c + rad * np.sin(ang)], axis=1)
        else:
            w, h = rng.uniform(0.45, 0.75, 2) * span
            sk = rng.uniform(-0.3, 0.3) * w
            base = np.array([[-w - sk, -h], [w - sk, -h], [w + sk, h], [-w + sk, h]])
            t = rng.uniform(0, math.pi)
            rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
            poly = base @ rot.T + c
        poly = _orient(poly)
        if (poly.min() >= margin and poly.max() <= tile - margin and _angles_ok(poly)
                and min(np.linalg.norm(poly - np.roll(poly, 1, axis=0), axis=1)) >= 10.0):
            return poly
    raise RuntimeError("failed to sample a well-shaped polygon")


def corner_image(rng, size=256, tiles=None, margin=5.0):
    """Return (image H x W float32 in [0, 1], list of corner Keypoints).

    ``tiles`` per side defaults to one per ~50 px.
    """
    tiles = tiles or max(1, size // 50)
    tile = size / tiles
    ss = SUPERSAMPLE
    fine = (np.arange(size * ss) + 0.5) / ss - 0.5
    fx, fy = np.meshgrid(fine, fine)
    bg0, gx, gy = rng.uniform(0.3, 0.7), rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15)
    canvas = bg0 + gx * (fx / size - 0.5) + gy * (fy / size - 0.5)
    corners = []
    for ty in range(tiles):
        for tx in range(tiles):
            poly = _random_polygon(rng, tile, margin) + np.array([tx * tile, ty * tile])
            x0, y0 = (np.floor(poly.min(axis=0)) * ss).astype(int)
            x1, y1 = (np.ceil(poly.max(axis=0) + 1) * ss).astype(int)
            x0, y0, x1, y1 = max(x0, 0), max(y0, 0), min(x1, size * ss), min(y1, size * ss)
            sub = canvas[y0:y1, x0:x1]
            bg = float(sub.mean())
            sign = rng.choice([-1.0, 1.0])
            if not 0.0 <= bg + sign * MIN_CONTRAST <= 1.0:
                sign = -sign
            value = bg + sign * rng.uniform(MIN_CONTRAST, 0.45)
            mask = _convex_mask(poly, fx[y0:y1, x0:x1], fy[y0:y1, x0:x1])
            sub[mask] = np.clip(value, 0.0, 1.0)
            corners.extend(Keypoint(float(x), float(y)) for x, y in poly)
    img = canvas.reshape(size, ss, size, ss).mean(axis=(1, 3))
    return np.clip(img, 0.0, 1.0).astype(np.float32), corners


def corner_dataset(n, seed, size=256, level=None):
    """``n`` (sharp, blurred, corners) triples; ``level`` None leaves the blurred copy sharp."""
    out = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        img, kp = corner_image(rng, size)
        blurred = synth_pair(img, level, rng)[0].astype(np.float32) if level is not None else img.copy()
        out.append((img, blurred, kp))
    return out


def random_view(rng, height, width, max_rot=10.0, scale=(0.9, 1.1), persp=0.02, shift=8.0):
    """Mild homography about the image centre: rotation, scale, corner jitter, translation."""
    from .supervision import homography_from_points

    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    corners = np.array([[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]], dtype=np.float64)
    t = math.radians(rng.uniform(-max_rot, max_rot))
    s = rng.uniform(*scale)
    rot = s * np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    moved = (corners - [cx, cy]) @ rot.T + [cx, cy]
    moved += rng.uniform(-persp, persp, size=(4, 2)) * [width, height]
    moved += rng.uniform(-shift, shift, size=2)
    return Homography(homography_from_points(corners, moved))
