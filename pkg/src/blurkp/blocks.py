"""Network building blocks: channel MLP, multi-axis gated MLP, SE gate and RMAB.

Every block is a pure function of an input tensor and a ``BlockParams``.
Parameters are created by the matching ``init_*`` function, which validates
that all shapes follow from the input width and hyperparameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorgrad as tg
from .tensorgrad import Tensor

GATE_INIT_SCALE = 1e-3


@dataclass
class BlockParams:
    """Named parameter tensors of one block plus its static hyperparameters.

    Nested sub-blocks use dotted names (``local.spatial_w``); ``sub`` returns
    a view with the prefix stripped.
    """

    kind: str
    tensors: dict = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def sub(self, prefix, kind=None):
        p = prefix + "."
        return BlockParams(
            kind or prefix,
            {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)},
            self.hyper,
        )

    def items(self):
        return self.tensors.items()

    def count(self):
        return sum(t.size for t in self.tensors.values())


def _dense(rng, cin, cout, dtype):
    bound = np.sqrt(1.0 / cin)
    w = rng.uniform(-bound, bound, size=(cin, cout)).astype(dtype)
    b = rng.uniform(-bound, bound, size=(cout,)).astype(dtype)
    return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)


def _norm(c, dtype):
    return Tensor(np.ones(c, dtype), requires_grad=True), Tensor(np.zeros(c, dtype), requires_grad=True)


def _put(tensors, prefix, pair, names=("w", "b")):
    for name, t in zip(names, pair):
        tensors[f"{prefix}.{name}" if prefix else name] = t


# ---------------------------------------------------------------------------
# channel MLP


def init_stem(rng, cin, cout, dtype=np.float32):
    t = {}
    _put(t, "", _dense(rng, cin, cout, dtype))
    return BlockParams("stem", t, {"cin": cin, "cout": cout})


def stem(x, p):
    """Single channel dense lifting the raw image to the first stage width."""
    return tg.dense_channels(x, p["w"], p["b"])


def init_channel_mlp(rng, cin, cout, expansion=2, dtype=np.float32):
    t = {}
    _put(t, "ln", _norm(cin, dtype), ("gamma", "beta"))
    _put(t, "fc1", _dense(rng, cin, expansion * cin, dtype))
    _put(t, "fc2", _dense(rng, expansion * cin, cout, dtype))
    return BlockParams("channel_mlp", t, {"cin": cin, "cout": cout, "expansion": expansion})


def channel_mlp_block(x, p):
    """LN -> dense(C -> aC) -> GELU -> dense(aC -> C'), residual when C == C'."""
    if x.shape[-1] != p.hyper["cin"]:
        raise ValueError(f"channel_mlp_block: expected {p.hyper['cin']} channels, got {x.shape[-1]}")
    h = tg.layer_norm(x, p["ln.gamma"], p["ln.beta"])
    h = tg.gelu(tg.dense_channels(h, p["fc1.w"], p["fc1.b"]))
    h = tg.dense_channels(h, p["fc2.w"], p["fc2.b"])
    if p.hyper["cin"] == p.hyper["cout"]:
        h = tg.add(x, h)
    return h


# ---------------------------------------------------------------------------
# spatial partitions


def _check_div(H, W, k, what):
    if k <= 0 or H % k or W % k:
        raise ValueError(f"{what}: {k} does not divide {H}x{W}")


def block_partition(x, b):
    """H x W x C -> (H/b * W/b) x b^2 x C; each group is one b x b block."""
    H, W, C = x.shape
    _check_div(H, W, b, "block_partition")
    return tg.rearrange(x, (H // b, b, W // b, b, C), (0, 2, 1, 3, 4), ((H // b) * (W // b), b * b, C))


def block_unpartition(u, b, H, W):
    C = u.shape[-1]
    _check_div(H, W, b, "block_unpartition")
    return tg.rearrange(u, (H // b, W // b, b, b, C), (0, 2, 1, 3, 4), (H, W, C))


def grid_partition(x, g):
    """H x W x C -> (H/g * W/g) x g^2 x C; each group gathers one offset from every grid cell."""
    H, W, C = x.shape
    _check_div(H, W, g, "grid_partition")
    sh, sw = H // g, W // g
    return tg.rearrange(x, (g, sh, g, sw, C), (1, 3, 0, 2, 4), (sh * sw, g * g, C))


def grid_unpartition(u, g, H, W):
    C = u.shape[-1]
    _check_div(H, W, g, "grid_unpartition")
    sh, sw = H // g, W // g
    return tg.rearrange(u, (sh, sw, g, g, C), (2, 0, 3, 1, 4), (H, W, C))


# ---------------------------------------------------------------------------
# gated spatial MLP


def init_gated_spatial(rng, channels, length, dtype=np.float32, prefix=""):
    t = {}
    pre = f"{prefix}." if prefix else ""
    _put(t, pre + "ln", _norm(channels, dtype), ("gamma", "beta"))
    _put(t, pre + "fc_in", _dense(rng, channels, 2 * channels, dtype))
    _put(t, pre + "gate_ln", _norm(channels, dtype), ("gamma", "beta"))
    sw = rng.uniform(-GATE_INIT_SCALE, GATE_INIT_SCALE, size=(length, length)).astype(dtype)
    t[pre + "spatial_w"] = Tensor(sw, requires_grad=True)
    t[pre + "spatial_b"] = Tensor(np.ones(length, dtype), requires_grad=True)
    _put(t, pre + "fc_out", _dense(rng, channels, channels, dtype))
    return BlockParams("gated_spatial", t, {"channels": channels, "length": length})


def gated_spatial_mlp(u, p):
    """Spatial gating unit over the position axis of a G x L x C tensor, with residual."""
    C = u.shape[-1]
    z = tg.layer_norm(u, p["ln.gamma"], p["ln.beta"])
    z = tg.gelu(tg.dense_channels(z, p["fc_in.w"], p["fc_in.b"]))
    z1 = tg.channel_slice(z, 0, C)
    z2 = tg.channel_slice(z, C, 2 * C)
    z2 = tg.layer_norm(z2, p["gate_ln.gamma"], p["gate_ln.beta"])
    z2 = tg.dense_spatial(z2, p["spatial_w"], p["spatial_b"])
    h = tg.dense_channels(tg.mul(z1, z2), p["fc_out.w"], p["fc_out.b"])
    return tg.add(u, h)


# ---------------------------------------------------------------------------
# multi-axis gated MLP


def init_multi_axis_gmlp(rng, channels, b=8, g=8, input_factor=2, dtype=np.float32):
    inner = input_factor * channels
    if inner % 2:
        raise ValueError("multi-axis gMLP needs an even inner width")
    half = inner // 2
    t = {}
    _put(t, "ln", _norm(channels, dtype), ("gamma", "beta"))
    _put(t, "fc_in", _dense(rng, channels, inner, dtype))
    t.update(init_gated_spatial(rng, half, b * b, dtype, prefix="local").tensors)
    t.update(init_gated_spatial(rng, half, g * g, dtype, prefix="global").tensors)
    _put(t, "fc_out", _dense(rng, inner, channels, dtype))
    return BlockParams("multi_axis_gmlp", t, {"channels": channels, "b": b, "g": g, "input_factor": input_factor})


def multi_axis_gmlp_block(x, p):
    """Parallel local (b x b blocks) and global (g x g dilated grid) gated mixing."""
    H, W, C = x.shape
    b, g = p.hyper["b"], p.hyper["g"]
    if H % b or W % b or H % g or W % g:
        raise ValueError(f"multi_axis_gmlp_block: {H}x{W} not divisible by b={b}, g={g}")
    h = tg.layer_norm(x, p["ln.gamma"], p["ln.beta"])
    h = tg.dense_channels(h, p["fc_in.w"], p["fc_in.b"])
    half = h.shape[-1] // 2
    local = tg.channel_slice(h, 0, half)
    glob = tg.channel_slice(h, half, 2 * half)
    local = block_unpartition(gated_spatial_mlp(block_partition(local, b), p.sub("local")), b, H, W)
    glob = grid_unpartition(gated_spatial_mlp(grid_partition(glob, g), p.sub("global")), g, H, W)
    h = tg.dense_channels(tg.concat_channels((local, glob)), p["fc_out.w"], p["fc_out.b"])
    return tg.add(x, h)


# ---------------------------------------------------------------------------
# squeeze-and-excitation and RMAB


def init_se(rng, channels, reduction=4, dtype=np.float32, prefix=""):
    if channels % reduction:
        raise ValueError(f"SE block: {channels} channels not divisible by reduction {reduction}")
    pre = f"{prefix}." if prefix else ""
    t = {}
    _put(t, pre + "squeeze", _dense(rng, channels, channels // reduction, dtype))
    _put(t, pre + "excite", _dense(rng, channels // reduction, channels, dtype))
    return BlockParams("se", t, {"channels": channels, "reduction": reduction})


def se_block(x, p):
    s = tg.mean_spatial(x)
    s = tg.gelu(tg.dense_channels(s, p["squeeze.w"], p["squeeze.b"]))
    w = tg.sigmoid(tg.dense_channels(s, p["excite.w"], p["excite.b"]))
    return tg.scale_channels(x, w)


def init_rmab(rng, channels, expansion=2, reduction=4, dtype=np.float32):
    t = {}
    _put(t, "ln", _norm(channels, dtype), ("gamma", "beta"))
    _put(t, "fc1", _dense(rng, channels, expansion * channels, dtype))
    _put(t, "fc2", _dense(rng, expansion * channels, channels, dtype))
    t.update(init_se(rng, channels, reduction, dtype, prefix="se").tensors)
    return BlockParams("rmab", t, {"channels": channels, "expansion": expansion, "reduction": reduction})


def rmab(x, p):
    """Residual MLP attention block: x + SE(dense(GELU(dense(LN(x)))))."""
    h = tg.layer_norm(x, p["ln.gamma"], p["ln.beta"])
    h = tg.gelu(tg.dense_channels(h, p["fc1.w"], p["fc1.b"]))
    h = tg.dense_channels(h, p["fc2.w"], p["fc2.b"])
    return tg.add(x, se_block(h, p.sub("se")))


# ---------------------------------------------------------------------------
# depth <-> space


def depth_to_space(x, n):
    """H' x W' x 4^n -> (H' 2^n) x (W' 2^n) x 1.

    Channel c of cell (u, v) lands on pixel (u 2^n + c // 2^n, v 2^n + c % 2^n).
    """
    Hc, Wc, C = x.shape
    s = 2 ** n
    if C != s * s:
        raise ValueError(f"depth_to_space: need {s * s} channels for n={n}, got {C}")
    return tg.rearrange(x, (Hc, Wc, s, s), (0, 2, 1, 3), (Hc * s, Wc * s, 1))


def space_to_depth(x, n):
    H, W, C = x.shape
    s = 2 ** n
    if C != 1 or H % s or W % s:
        raise ValueError(f"space_to_depth: cannot fold {x.shape} with n={n}")
    return tg.rearrange(x, (H // s, s, W // s, s), (0, 2, 1, 3), (H // s, W // s, s * s))
