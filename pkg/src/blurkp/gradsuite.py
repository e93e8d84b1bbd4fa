"""Finite-difference gradient checks for every differentiable block, on small float64 shapes."""

from __future__ import annotations

import numpy as np

from . import blocks
from . import tensorgrad as tg

TOLERANCE = 1e-4
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def _leaves(bp):
    return [t for _, t in bp.items()]


def _case_dense(seed):
    rng = np.random.default_rng(seed + 100)
    w, b = blocks._dense(rng, 8, 6, np.float64)
    return tg.gradcheck(lambda x: tg.dense_channels(x, w, b), [(4, 4, 8)], seed, wrt=[w, b])


def _case_gelu(seed):
    return tg.gradcheck(tg.gelu, [(8, 8, 8)], seed, low=-4.0, high=4.0)


def _case_layer_norm(seed):
    rng = np.random.default_rng(seed + 100)
    gamma = tg.Tensor(rng.uniform(0.5, 1.5, 8), dtype=np.float64)
    beta = tg.Tensor(rng.uniform(-0.5, 0.5, 8), dtype=np.float64)
    return tg.gradcheck(lambda x: tg.layer_norm(x, gamma, beta), [(4, 4, 8)], seed, wrt=[gamma, beta])


def _case_softmax(seed):
    return tg.gradcheck(tg.softmax_channels, [(4, 4, 8)], seed)


def _case_maxpool(seed):
    return tg.gradcheck(tg.maxpool2, [(8, 8, 4)], seed)


def _case_gated_spatial(seed):
    p = blocks.init_gated_spatial(np.random.default_rng(seed + 100), 4, 16, np.float64)
    # non-trivial spatial weights so the gate path carries signal
    p["spatial_w"].data = np.random.default_rng(seed + 200).uniform(-0.5, 0.5, (16, 16))
    return tg.gradcheck(lambda u: blocks.gated_spatial_mlp(u, p), [(4, 16, 4)], seed, wrt=_leaves(p))


def _case_multi_axis(seed):
    p = blocks.init_multi_axis_gmlp(np.random.default_rng(seed + 100), 8, b=4, g=4, dtype=np.float64)
    r = np.random.default_rng(seed + 200)
    for name in ("local.spatial_w", "global.spatial_w"):
        p[name].data = r.uniform(-0.5, 0.5, p[name].shape)
    return tg.gradcheck(lambda x: blocks.multi_axis_gmlp_block(x, p), [(8, 8, 8)], seed, wrt=_leaves(p))


def _case_se(seed):
    p = blocks.init_se(np.random.default_rng(seed + 100), 8, 4, np.float64)
    return tg.gradcheck(lambda x: blocks.se_block(x, p), [(4, 4, 8)], seed, wrt=_leaves(p))


def _case_rmab(seed):
    p = blocks.init_rmab(np.random.default_rng(seed + 100), 8, 2, 4, np.float64)
    return tg.gradcheck(lambda x: blocks.rmab(x, p), [(4, 4, 8)], seed, wrt=_leaves(p))


def _case_head(seed):
    # dense -> GELU -> dense to 4^1 channels -> softmax -> depth-to-space
    rng = np.random.default_rng(seed + 100)
    w1, b1 = blocks._dense(rng, 8, 8, np.float64)
    w2, b2 = blocks._dense(rng, 8, 4, np.float64)

    def head(f):
        h = tg.gelu(tg.dense_channels(f, w1, b1))
        return blocks.depth_to_space(tg.softmax_channels(tg.dense_channels(h, w2, b2)), 1)

    return tg.gradcheck(head, [(4, 4, 8)], seed, wrt=[w1, b1, w2, b2])


def _case_mse(seed):
    target = tg.Tensor(np.random.default_rng(seed + 100).uniform(0, 1, (8, 8, 1)), dtype=np.float64)
    return tg.gradcheck(lambda r: tg.mse_loss(r, target), [(8, 8, 1)], seed)


CASES = {
    "dense_channels": _case_dense,
    "gelu": _case_gelu,
    "layer_norm": _case_layer_norm,
    "softmax_channels": _case_softmax,
    "maxpool2": _case_maxpool,
    "gated_spatial_mlp": _case_gated_spatial,
    "multi_axis_gmlp_block": _case_multi_axis,
    "se_block": _case_se,
    "rmab": _case_rmab,
    "detection_head": _case_head,
    "mse_loss": _case_mse,
}


def run_suite(seeds=DEFAULT_SEEDS, names=None):
    """Worst relative error per block over all seeds."""
    out = {}
    for name in names or CASES:
        out[name] = max(CASES[name](s) for s in seeds)
    return out
