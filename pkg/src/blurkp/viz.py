"""Raster visualizations written as plain RGB arrays."""

from __future__ import annotations

import numpy as np

from .evalkit import repeatability, shared_region_filter, top_k

MATCH = (0.1, 0.9, 0.2)
UNMATCHED = (0.9, 0.2, 0.1)


def _line(canvas, x0, y0, x1, y1, color):
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    xs = np.rint(np.linspace(x0, x1, n)).astype(int)
    ys = np.rint(np.linspace(y0, y1, n)).astype(int)
    ok = (xs >= 0) & (xs < canvas.shape[1]) & (ys >= 0) & (ys < canvas.shape[0])
    canvas[ys[ok], xs[ok]] = color


def _cross(canvas, x, y, color, r=2):
    _line(canvas, x - r, y, x + r, y, color)
    _line(canvas, x, y - r, x, y + r, color)


def draw_matches(ref, tgt, kpts_ref, kpts_tgt, hm, top=1000, eps=0.4, rho=4.0, gap=8):
    """Reference and target side by side; matched pairs joined by lines, others marked red."""
    h = max(ref.shape[0], tgt.shape[0])
    off = ref.shape[1] + gap
    canvas = np.ones((h, off + tgt.shape[1], 3), dtype=np.float32)
    canvas[:ref.shape[0], :ref.shape[1]] = ref[:, :, None]
    canvas[:tgt.shape[0], off:] = tgt[:, :, None]
    res = repeatability(kpts_ref, kpts_tgt, hm, ref.shape[:2], tgt.shape[:2], top, eps, rho)
    # match indices refer to the filtered, score-sorted lists
    fr, ft = shared_region_filter(top_k(kpts_ref, top), top_k(kpts_tgt, top), hm,
                                  ref.shape[:2], tgt.shape[:2], rho)
    hit_r = {i for i, _, _ in res.matches}
    hit_t = {j for _, j, _ in res.matches}
    for i, k in enumerate(fr):
        _cross(canvas, k.x, k.y, MATCH if i in hit_r else UNMATCHED)
    for j, k in enumerate(ft):
        _cross(canvas, k.x + off, k.y, MATCH if j in hit_t else UNMATCHED)
    for i, j, _ in res.matches:
        _line(canvas, fr[i].x, fr[i].y, ft[j].x + off, ft[j].y, MATCH)
    return canvas
