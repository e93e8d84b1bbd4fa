"""Encoder, channel-softmax detection head, response maps and keypoint extraction."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import blocks
from . import tensorgrad as tg
from .keypoint import Keypoint, sort_by_score
from .tensorgrad import Tensor

DEFAULT_THRESHOLD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 3                      # pyramid depth N; cells are 2^N x 2^N
    stage_channels: tuple = (32, 64, 128)
    block_size: int = 8                 # b, local mixing window
    grid_size: int = 8                  # g, global mixing grid
    head_hidden: int = 128
    se_reduction: int = 4
    expansion: int = 2
    gmlp_input_factor: int = 2
    use_rmab: bool = True
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        self.validate()

    def validate(self):
        ints = [self.depth, self.block_size, self.grid_size, self.head_hidden, self.se_reduction,
                self.expansion, self.gmlp_input_factor, self.in_channels, *self.stage_channels]
        if any(v <= 0 for v in ints):
            raise ValueError("model config extents must be positive")
        if len(self.stage_channels) != self.depth:
            raise ValueError(f"{len(self.stage_channels)} stage widths for depth {self.depth}")
        for c in self.stage_channels:
            if self.use_rmab and c % self.se_reduction:
                raise ValueError(f"stage width {c} not divisible by SE reduction {self.se_reduction}")
            if (self.gmlp_input_factor * c) % 2:
                raise ValueError(f"stage width {c} gives an odd gMLP inner width")

    @property
    def cell(self):
        return 2 ** self.depth

    @property
    def response_channels(self):
        return 4 ** self.depth

    @property
    def pad_multiple(self):
        """Input extents must be multiples of this (2^N times lcm(b, g))."""
        return self.cell * math.lcm(self.block_size, self.grid_size)

    def to_dict(self):
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        return d


class Model:
    """Architecture config plus ordered, named parameter tensors."""

    def __init__(self, config, blocks_by_name):
        self.config = config
        self.blocks = blocks_by_name
        self.params = {}
        for prefix, bp in blocks_by_name.items():
            for name, t in bp.items():
                full = f"{prefix}.{name}"
                t.name = full
                self.params[full] = t

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def astype(self, dtype):
        twin = build_model(self.config, seed=0, dtype=dtype)
        for name, p in self.params.items():
            twin.params[name].data[...] = p.data.astype(dtype)
        return twin

    def copy(self):
        return self.astype(self.params["stem.w"].dtype)

    def __repr__(self):
        return f"Model({self.config}, params={param_count(self)})"


def build_model(config=None, seed=0, dtype=np.float32):
    """Seeded construction: stem, then per stage {channel MLP, multi-axis gMLP, RMAB}, then head."""
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    widths = config.stage_channels
    found = {"stem": blocks.init_stem(rng, config.in_channels, widths[0], dtype)}
    cin = widths[0]
    for k, c in enumerate(widths, start=1):
        found[f"stage{k}.cmlp"] = blocks.init_channel_mlp(rng, cin, c, config.expansion, dtype)
        found[f"stage{k}.gmlp"] = blocks.init_multi_axis_gmlp(
            rng, c, config.block_size, config.grid_size, config.gmlp_input_factor, dtype)
        if config.use_rmab:
            found[f"stage{k}.rmab"] = blocks.init_rmab(rng, c, config.expansion, config.se_reduction, dtype)
        cin = c
    head = {}
    head["fc1.w"], head["fc1.b"] = blocks._dense(rng, widths[-1], config.head_hidden, dtype)
    head["fc2.w"], head["fc2.b"] = blocks._dense(rng, config.head_hidden, config.response_channels, dtype)
    found["head"] = blocks.BlockParams("head", head, {})
    return Model(config, found)


def param_count(m):
    return int(sum(p.size for p in m.params.values()))


def _as_image_tensor(image, dtype):
    if isinstance(image, Tensor):
        image = image.data
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"image must be H x W or H x W x C, got shape {arr.shape}")
    return arr.astype(dtype, copy=False)


def pad_image(arr, multiple):
    """Reflect-pad bottom/right so both extents are multiples of ``multiple``."""
    H, W = arr.shape[:2]
    ph = (-H) % multiple
    pw = (-W) % multiple
    if ph == 0 and pw == 0:
        return arr
    return np.pad(arr, ((0, ph), (0, pw), (0, 0)), mode="reflect")


def encode(m, image):
    """H x W x 1 image (extents multiples of ``pad_multiple``) -> H/2^N x W/2^N x C_last."""
    cfg = m.config
    x = image if isinstance(image, Tensor) else Tensor(_as_image_tensor(image, m.params["stem.w"].dtype))
    H, W = x.shape[:2]
    if H % cfg.pad_multiple or W % cfg.pad_multiple:
        raise ValueError(f"encode: {H}x{W} is not a multiple of {cfg.pad_multiple}; pad first")
    if x.shape[2] != cfg.in_channels:
        raise ValueError(f"encode: model expects {cfg.in_channels} input channels, got {x.shape[2]}")
    b = m.blocks
    h = blocks.stem(x, b["stem"])
    for k in range(1, cfg.depth + 1):
        h = blocks.channel_mlp_block(h, b[f"stage{k}.cmlp"])
        h = blocks.multi_axis_gmlp_block(h, b[f"stage{k}.gmlp"])
        if cfg.use_rmab:
            h = blocks.rmab(h, b[f"stage{k}.rmab"])
        h = tg.maxpool2(h)
    return h


def head_logits(m, features):
    p = m.blocks["head"]
    h = tg.gelu(tg.dense_channels(features, p["fc1.w"], p["fc1.b"]))
    return tg.dense_channels(h, p["fc2.w"], p["fc2.b"])


def cell_probabilities(m, image):
    """Per-cell channel softmax on the padded image.

    Returns (probabilities tensor H'/2^N... x 4^N, original (H, W)).
    """
    arr = _as_image_tensor(image, m.params["stem.w"].dtype)
    H, W = arr.shape[:2]
    padded = pad_image(arr, m.config.pad_multiple)
    probs = tg.softmax_channels(head_logits(m, encode(m, Tensor(padded))))
    return probs, (H, W)


def score_map(m, image, crop=True):
    """Full-resolution response map in (0, 1), same H x W as ``image``.

    With ``crop=False`` the padded map is returned, in which every
    2^N x 2^N cell sums to one.
    """
    probs, (H, W) = cell_probabilities(m, image)
    r = blocks.depth_to_space(probs, m.config.depth)
    return tg.crop(r, H, W) if crop else r


def detect(m, image, max_k=1000, threshold=DEFAULT_THRESHOLD):
    """One candidate per cell (channel argmax), thresholded, top ``max_k`` by score."""
    if max_k < 1:
        raise ValueError("max_k must be at least 1")
    probs, (H, W) = cell_probabilities(m, image)
    return keypoints_from_cells(probs.data, m.config.depth, H, W, max_k, threshold)


def keypoints_from_cells(probs, depth, height, width, max_k, threshold):
    s = 2 ** depth
    Hc, Wc, _ = probs.shape
    idx = probs.argmax(axis=-1)
    score = np.take_along_axis(probs, idx[..., None], axis=-1)[..., 0]
    u, v = np.mgrid[0:Hc, 0:Wc]
    ys = u * s + idx // s
    xs = v * s + idx % s
    inside = ((u + 1) * s <= height) & ((v + 1) * s <= width)
    keep = inside & (score > threshold)
    kpts = [Keypoint(float(x), float(y), float(sc))
            for x, y, sc in zip(xs[keep], ys[keep], score[keep])]
    return sort_by_score(kpts)[:max_k]
