"""Pure NumPy/Python implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Arrays passed in are C-contiguous; the dispatch layer in ``kernels`` takes
care of that.
"""

import math

import numpy as np

_GELU_K0 = math.sqrt(2.0 / math.pi)
_GELU_K1 = 0.044715


def gelu_forward(x):
    inner = _GELU_K0 * (x + _GELU_K1 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_backward(x, gout):
    x2 = x * x
    t = np.tanh(_GELU_K0 * x * (1.0 + _GELU_K1 * x2))
    dinner = _GELU_K0 * (1.0 + 3.0 * _GELU_K1 * x2)
    return gout * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def layer_norm_forward(x, gamma, beta, eps):
    """Row-wise normalization of a 2-D array; returns (y, xhat, rstd)."""
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layer_norm_backward(gout, xhat, rstd, gamma):
    """Returns (gx, dgamma, dbeta) for a 2-D layer norm."""
    dgamma = (gout * xhat).sum(axis=0)
    dbeta = gout.sum(axis=0)
    gy = gout * gamma
    c1 = gy.mean(axis=1, keepdims=True)
    c2 = (gy * xhat).mean(axis=1, keepdims=True)
    gx = (gy - c1 - xhat * c2) * rstd[:, None]
    return gx, dgamma, dbeta


def greedy_match(cand_i, cand_j, n_ref, n_tgt):
    """Accept pre-sorted candidate pairs greedily; each index is used at most once.

    Returns the positions (into the candidate arrays) of accepted pairs.
    """
    used_i = [False] * n_ref
    used_j = [False] * n_tgt
    accepted = []
    for k in range(len(cand_i)):
        i = int(cand_i[k])
        j = int(cand_j[k])
        if used_i[i] or used_j[j]:
            continue
        used_i[i] = True
        used_j[j] = True
        accepted.append(k)
    return np.asarray(accepted, dtype=np.intp)


def nms_disk(ys, xs, height, width, radius):
    """Greedy non-maximum suppression over candidates already sorted by score.

    A kept point suppresses every later candidate within Euclidean ``radius``.
    Returns a boolean keep mask aligned with the inputs.
    """
    r = int(math.floor(radius))
    r2 = radius * radius
    blocked = np.zeros((height, width), dtype=bool)
    keep = np.zeros(len(ys), dtype=bool)
    offsets = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)
               if dy * dy + dx * dx <= r2]
    for k in range(len(ys)):
        y = int(ys[k])
        x = int(xs[k])
        if blocked[y, x]:
            continue
        keep[k] = True
        for dy, dx in offsets:
            yy = y + dy
            xx = x + dx
            if 0 <= yy < height and 0 <= xx < width:
                blocked[yy, xx] = True
    return keep


def splat_bilinear(xs, ys, weights, k):
    """Deposit weighted sub-pixel samples into a k x k grid centred at (k-1)/2."""
    out = np.zeros((k, k), dtype=np.float64)
    c = (k - 1) / 2.0
    for n in range(len(xs)):
        px = xs[n] + c
        py = ys[n] + c
        x0 = int(math.floor(px))
        y0 = int(math.floor(py))
        fx = px - x0
        fy = py - y0
        w = weights[n]
        for yy, wy in ((y0, 1.0 - fy), (y0 + 1, fy)):
            for xx, wx in ((x0, 1.0 - fx), (x0 + 1, fx)):
                v = w * wy * wx
                if v == 0.0:
                    continue
                if not (0 <= yy < k and 0 <= xx < k):
                    raise ValueError("trajectory sample falls outside the kernel support")
                out[yy, xx] += v
    return out
