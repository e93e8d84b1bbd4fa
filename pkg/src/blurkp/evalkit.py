"""Repeatability of keypoint detections between two views related by a homography.

Each keypoint is modelled as an axis-aligned square of half-side ``rho``.
A reference square is carried into the target view by moving its centre
through the homography and scaling its side by the local area change. Two
keypoints correspond when the overlap error (one minus IoU) of their squares
is strictly below the threshold; every keypoint is matched at most once,
greedily in ascending error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .keypoint import Keypoint, sort_by_score, to_array

DET_EPS = 1e-12


class Homography:
    """Non-singular 3 x 3 projective map, normalized so M[2, 2] == 1 when nonzero."""

    def __init__(self, matrix):
        m = np.array(matrix, dtype=np.float64).reshape(3, 3)
        if m[2, 2] != 0.0:
            m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= DET_EPS:
            raise ValueError("singular homography")
        self.matrix = m

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx, ty):
        return cls([[1, 0, tx], [0, 1, ty], [0, 0, 1]])

    def inverse(self):
        return Homography(np.linalg.inv(self.matrix))

    def __matmul__(self, other):
        return Homography(self.matrix @ other.matrix)

    def __repr__(self):
        return f"Homography({self.matrix.tolist()})"


def _as_h(hm):
    return hm if isinstance(hm, Homography) else Homography(hm)


def warp_points(hm, pts):
    """Vectorized projective map of an N x 2 array of (x, y)."""
    m = _as_h(hm).matrix
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    w = m[2, 0] * pts[:, 0] + m[2, 1] * pts[:, 1] + m[2, 2]
    if (np.abs(w) <= DET_EPS).any():
        raise ValueError("point maps to infinity under the homography")
    x = (m[0, 0] * pts[:, 0] + m[0, 1] * pts[:, 1] + m[0, 2]) / w
    y = (m[1, 0] * pts[:, 0] + m[1, 1] * pts[:, 1] + m[1, 2]) / w
    return np.stack([x, y], axis=1)


def warp_point(hm, p):
    x, y = warp_points(hm, [p])[0]
    return float(x), float(y)


def jacobian_scales(hm, pts):
    """sqrt(|det J|) of the homography at each point; det J = det(M) / w^3."""
    m = _as_h(hm).matrix
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    w = m[2, 0] * pts[:, 0] + m[2, 1] * pts[:, 1] + m[2, 2]
    if (np.abs(w) <= DET_EPS).any():
        raise ValueError("degenerate homography at point")
    return np.sqrt(np.abs(np.linalg.det(m) / w ** 3))


def jacobian_scale(hm, p):
    return float(jacobian_scales(hm, [p])[0])


def _square_errors(c1, half1, c2, half2):
    """Overlap error matrix between squares (centres N x 2, half-sides N) and (M x 2, M)."""
    lo = np.maximum(c1[:, None, :] - half1[:, None, None], c2[None, :, :] - half2[None, :, None])
    hi = np.minimum(c1[:, None, :] + half1[:, None, None], c2[None, :, :] + half2[None, :, None])
    side = np.clip(hi - lo, 0.0, None)
    inter = side[..., 0] * side[..., 1]
    union = (2 * half1[:, None]) ** 2 + (2 * half2[None, :]) ** 2 - inter
    return (union - inter) / union


def overlap_errors(ref_xy, tgt_xy, hm, rho=4.0):
    """Pairwise overlap error between reference (warped) and target squares."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    ref_xy = np.asarray(ref_xy, dtype=np.float64).reshape(-1, 2)
    tgt_xy = np.asarray(tgt_xy, dtype=np.float64).reshape(-1, 2)
    if len(ref_xy) == 0 or len(tgt_xy) == 0:
        return np.zeros((len(ref_xy), len(tgt_xy)))
    centres = warp_points(hm, ref_xy)
    halves = rho * jacobian_scales(hm, ref_xy)
    return _square_errors(centres, halves, tgt_xy, np.full(len(tgt_xy), float(rho)))


def region_overlap_error(kp_ref, kp_tgt, hm, rho=4.0):
    return float(overlap_errors([(kp_ref.x, kp_ref.y)], [(kp_tgt.x, kp_tgt.y)], hm, rho)[0, 0])


def _inside(xy, dims, rho):
    H, W = dims
    return (xy[:, 0] >= rho) & (xy[:, 0] < W - rho) & (xy[:, 1] >= rho) & (xy[:, 1] < H - rho)


def shared_region_masks(ref_xy, tgt_xy, hm, dims_ref, dims_tgt, rho=4.0):
    hm = _as_h(hm)
    ref_xy = np.asarray(ref_xy, dtype=np.float64).reshape(-1, 2)
    tgt_xy = np.asarray(tgt_xy, dtype=np.float64).reshape(-1, 2)
    keep_ref = _inside(warp_points(hm, ref_xy), dims_tgt, rho) if len(ref_xy) else np.zeros(0, bool)
    keep_tgt = _inside(warp_points(hm.inverse(), tgt_xy), dims_ref, rho) if len(tgt_xy) else np.zeros(0, bool)
    return keep_ref, keep_tgt


def shared_region_filter(kpts_ref, kpts_tgt, hm, dims_ref, dims_tgt, rho=4.0):
    """Keep keypoints whose image in the other view lies inside its bounds inset by ``rho``.

    ``dims_*`` are (height, width).
    """
    keep_ref, keep_tgt = shared_region_masks(
        to_array(kpts_ref)[:, :2], to_array(kpts_tgt)[:, :2], hm, dims_ref, dims_tgt, rho)
    return ([k for k, ok in zip(kpts_ref, keep_ref) if ok],
            [k for k, ok in zip(kpts_tgt, keep_tgt) if ok])


def match_one_to_one(errors, eps_threshold=0.4):
    """Greedy one-to-one matching of pairs with error < ``eps_threshold``.

    Pairs are visited by ascending error, ties by smaller reference index and
    then smaller target index. Returns a list of (ref, tgt, error).
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        return []
    ii, jj = np.nonzero(errors < eps_threshold)
    if len(ii) == 0:
        return []
    ee = errors[ii, jj]
    order = np.lexsort((jj, ii, ee))
    ii, jj, ee = ii[order], jj[order], ee[order]
    acc = kernels.greedy_match(ii, jj, errors.shape[0], errors.shape[1])
    return [(int(ii[k]), int(jj[k]), float(ee[k])) for k in acc]


@dataclass
class MatchResult:
    matches: list = field(default_factory=list)
    n_ref: int = 0
    n_tgt: int = 0
    repeatability: float = 0.0

    @property
    def n_matches(self):
        return len(self.matches)


def top_k(kpts, k):
    return sort_by_score(kpts)[:k]


def repeatability(kpts_ref, kpts_tgt, hm, dims_ref, dims_tgt, top=1000, eps=0.4, rho=4.0):
    """Matched count over the smaller filtered keypoint count (0 when that is 0).

    Top-``top`` selection happens before shared-region filtering. Match
    indices refer to positions in the filtered, score-sorted lists.
    """
    hm = _as_h(hm)
    ref = top_k(kpts_ref, top)
    tgt = top_k(kpts_tgt, top)
    ref, tgt = shared_region_filter(ref, tgt, hm, dims_ref, dims_tgt, rho)
    denom = min(len(ref), len(tgt))
    if denom == 0:
        return MatchResult([], len(ref), len(tgt), 0.0)
    errs = overlap_errors(to_array(ref)[:, :2], to_array(tgt)[:, :2], hm, rho)
    matches = match_one_to_one(errs, eps)
    return MatchResult(matches, len(ref), len(tgt), len(matches) / denom)


__all__ = [
    "Homography", "Keypoint", "MatchResult", "jacobian_scale", "jacobian_scales",
    "match_one_to_one", "overlap_errors", "region_overlap_error", "repeatability",
    "shared_region_filter", "shared_region_masks", "warp_point", "warp_points",
]
