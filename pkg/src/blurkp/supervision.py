"""Heatmap-regression supervision: reference keypoints, GT rendering, augmentation, training."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from . import tensorgrad as tg
from .evalkit import warp_points
from .keypoint import Keypoint, to_array
from .model import score_map
from .tensorgrad import Tensor

log = logging.getLogger(__name__)

NMS_RADIUS = 4.0
CORNER_REL_THRESHOLD = 0.01
CORNER_ABS_THRESHOLD = 1e-7


@dataclass
class TrainingSample:
    sharp: np.ndarray
    blurred: np.ndarray
    gt_keypoints: list = field(default_factory=list)

    def __post_init__(self):
        self.sharp = np.asarray(self.sharp, dtype=np.float32)
        self.blurred = np.asarray(self.blurred, dtype=np.float32)
        if self.sharp.shape != self.blurred.shape:
            raise ValueError(f"sharp {self.sharp.shape} and blurred {self.blurred.shape} differ in size")
        H, W = self.sharp.shape[:2]
        for k in self.gt_keypoints:
            if not (0 <= k.x < W and 0 <= k.y < H):
                raise ValueError(f"keypoint ({k.x}, {k.y}) outside {W}x{H} image")


# ---------------------------------------------------------------------------
# reference keypoints


def corner_response(image, sigma=1.0):
    """Shi-Tomasi minimum-eigenvalue map of the 3 x 3 summed structure tensor."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[..., 0]
    smooth = ndimage.gaussian_filter(img, sigma, mode="reflect")
    diff = np.array([-0.5, 0.0, 0.5])
    ix = ndimage.correlate1d(smooth, diff, axis=1, mode="reflect")
    iy = ndimage.correlate1d(smooth, diff, axis=0, mode="reflect")
    sxx = ndimage.uniform_filter(ix * ix, 3, mode="reflect") * 9
    syy = ndimage.uniform_filter(iy * iy, 3, mode="reflect") * 9
    sxy = ndimage.uniform_filter(ix * iy, 3, mode="reflect") * 9
    half_tr = 0.5 * (sxx + syy)
    return half_tr - np.sqrt(np.maximum(0.0, 0.25 * (sxx - syy) ** 2 + sxy * sxy))


def detect_reference_keypoints(image, max_k=1000, radius=NMS_RADIUS):
    """Top ``max_k`` Shi-Tomasi corners: 3 x 3 local maxima above the floor, then greedy disk NMS."""
    if max_k <= 0:
        return []
    resp = corner_response(image)
    peak = float(resp.max())
    floor = max(CORNER_ABS_THRESHOLD, CORNER_REL_THRESHOLD * peak)
    peaks = resp >= ndimage.maximum_filter(resp, size=3, mode="nearest")
    ys, xs = np.nonzero(peaks & (resp > floor))
    if len(ys) == 0:
        return []
    sc = resp[ys, xs]
    order = np.lexsort((xs, ys, -sc))
    ys, xs, sc = ys[order], xs[order], sc[order]
    keep = kernels.nms_disk(ys, xs, resp.shape[0], resp.shape[1], radius)
    return [Keypoint(float(x), float(y), float(s)) for x, y, s in
            zip(xs[keep][:max_k], ys[keep][:max_k], sc[keep][:max_k])]


# ---------------------------------------------------------------------------
# targets and loss


def render_heatmap(kpts, height, width, sigma=2.0):
    """Max-combined Gaussians (peak 1 at each rounded keypoint pixel), cut at 3 sigma."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    out = np.zeros((height, width), dtype=np.float32)
    cut = 3.0 * sigma
    r = int(math.floor(cut))
    offs = np.arange(-r, r + 1)
    dy, dx = np.meshgrid(offs, offs, indexing="ij")
    d2 = dy * dy + dx * dx
    patch = np.where(d2 <= cut * cut, np.exp(-d2 / (2.0 * sigma * sigma)), 0.0).astype(np.float32)
    for k in kpts:
        cx = int(round(k.x))
        cy = int(round(k.y))
        y0, y1 = max(cy - r, 0), min(cy + r + 1, height)
        x0, x1 = max(cx - r, 0), min(cx + r + 1, width)
        if y0 >= y1 or x0 >= x1:
            continue
        sub = patch[y0 - (cy - r):y1 - (cy - r), x0 - (cx - r):x1 - (cx - r)]
        np.maximum(out[y0:y1, x0:x1], sub, out=out[y0:y1, x0:x1])
    return out[:, :, None]


def mse_loss(r, target):
    return tg.mse_loss(r, target if isinstance(target, Tensor) else Tensor(target, dtype=r.dtype))


def _project_simplex(v):
    """Row-wise Euclidean projection onto the probability simplex."""
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, v.shape[1] + 1)
    rho = v.shape[1] - 1 - np.argmax((u - css / ind > 0)[:, ::-1], axis=1)
    theta = css[np.arange(len(v)), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def loss_floor(target, depth=3):
    """Smallest MSE any cell-softmax response can reach against ``target``.

    Each 2^depth x 2^depth cell of the response sums to one, so the best
    achievable cell is the simplex projection of the target cell. ``target``
    must be H x W (x 1) with H, W multiples of the cell size.
    """
    t = np.asarray(target, dtype=np.float64).reshape(target.shape[0], target.shape[1])
    s = 2 ** depth
    H, W = t.shape
    if H % s or W % s:
        raise ValueError(f"target {H}x{W} is not a whole number of {s}x{s} cells")
    cells = t.reshape(H // s, s, W // s, s).transpose(0, 2, 1, 3).reshape(-1, s * s)
    return float(np.mean((_project_simplex(cells) - cells) ** 2))


# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    epochs: int = 50
    lr_initial: float = 1e-4
    lr_final: float = 1e-6
    decay_start_epoch: int = 20
    sigma_gt: float = 2.0
    seed: int = 0
    mix_sharp: float = 0.5     # probability of feeding the sharp image instead of the blurred one

    def __post_init__(self):
        if self.lr_final > self.lr_initial:
            raise ValueError("lr_final must not exceed lr_initial")
        if self.epochs > 0 and self.decay_start_epoch >= self.epochs:
            raise ValueError("decay_start_epoch must be below epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def lr_schedule(epoch, tc):
    """Constant until ``decay_start_epoch``, then linear down to ``lr_final`` at the last epoch."""
    if not 1 <= epoch <= tc.epochs:
        raise ValueError(f"epoch {epoch} outside 1..{tc.epochs}")
    if epoch <= tc.decay_start_epoch:
        return tc.lr_initial
    frac = (epoch - tc.decay_start_epoch) / (tc.epochs - tc.decay_start_epoch)
    return tc.lr_initial - frac * (tc.lr_initial - tc.lr_final)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    rotation: tuple = (-30.0, 30.0)        # degrees
    scale: tuple = (0.7, 1.4)
    skew: tuple = (-10.0, 10.0)            # degrees
    perspective: float = 0.05              # max corner jitter, fraction of side
    brightness: tuple = (-0.2, 0.2)
    contrast: tuple = (0.8, 1.25)
    gamma: tuple = (0.8, 1.25)
    noise: float = 0.02                    # max Gaussian noise std
    crop: int = 256

    def __post_init__(self):
        for name in ("rotation", "scale", "skew", "brightness", "contrast", "gamma"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is not ordered: {lo} > {hi}")
        if self.scale[0] <= 0 or self.gamma[0] <= 0 or self.contrast[0] < 0:
            raise ValueError("scale, gamma and contrast must be positive")
        if self.perspective < 0 or self.noise < 0 or self.crop < 1:
            raise ValueError("perspective, noise and crop must be non-negative")

    @classmethod
    def identity(cls, crop=256):
        return cls((0.0, 0.0), (1.0, 1.0), (0.0, 0.0), 0.0, (0.0, 0.0), (1.0, 1.0), (1.0, 1.0), 0.0, crop)

    @property
    def geometric(self):
        return (self.rotation != (0.0, 0.0) or self.scale != (1.0, 1.0) or self.skew != (0.0, 0.0)
                or self.perspective > 0)

    @property
    def photometric(self):
        return (self.brightness != (0.0, 0.0) or self.contrast != (1.0, 1.0) or self.gamma != (1.0, 1.0)
                or self.noise > 0)


def _translate(tx, ty):
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def homography_from_points(src, dst):
    """Exact 4-point homography (DLT with M[2, 2] = 1)."""
    a, rhs = [], []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.extend([u, v])
    h = np.linalg.solve(np.array(a, dtype=np.float64), np.array(rhs, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def sample_geometry(rng, cfg, height, width):
    """Random source -> crop matrix: affine and perspective about the centre, then crop offset."""
    S = cfg.crop
    if S > height or S > width:
        raise ValueError(f"crop {S} larger than image {height}x{width}")
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    theta = math.radians(rng.uniform(*cfg.rotation))
    s = rng.uniform(*cfg.scale)
    sk = math.tan(math.radians(rng.uniform(*cfg.skew)))
    rot = np.array([[math.cos(theta), -math.sin(theta), 0.0], [math.sin(theta), math.cos(theta), 0.0], [0, 0, 1]])
    shear = np.array([[1.0, sk, 0.0], [0.0, 1.0, 0.0], [0, 0, 1]])
    geo = np.diag([s, s, 1.0]) @ shear @ rot
    if cfg.perspective > 0:
        half = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=np.float64) * np.array([cx, cy])
        jitter = rng.uniform(-cfg.perspective, cfg.perspective, size=(4, 2)) * np.array([width, height])
        geo = homography_from_points(half, half + jitter) @ geo
    ox = int(rng.integers(0, width - S + 1))
    oy = int(rng.integers(0, height - S + 1))
    return _translate(-ox, -oy) @ _translate(cx, cy) @ geo @ _translate(-cx, -cy)


def warp_image(image, matrix, out_h, out_w):
    """Resample so that output pixel p shows source pixel matrix^-1 p (bilinear, reflected borders)."""
    inv = np.linalg.inv(matrix)
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    w = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    sx = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / w
    sy = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / w
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        chans = [ndimage.map_coordinates(img[..., c], [sy, sx], order=1, mode="reflect") for c in range(img.shape[2])]
        return np.stack(chans, axis=2).astype(np.float32)
    return ndimage.map_coordinates(img, [sy, sx], order=1, mode="reflect").astype(np.float32)


def photometric_jitter(image, cfg, rng):
    b = rng.uniform(*cfg.brightness)
    c = rng.uniform(*cfg.contrast)
    g = rng.uniform(*cfg.gamma)
    sigma = rng.uniform(0.0, cfg.noise) if cfg.noise > 0 else 0.0
    out = np.clip((image.astype(np.float64) - 0.5) * c + 0.5 + b, 0.0, 1.0) ** g
    if sigma > 0:
        out = out + rng.normal(0.0, sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def transform_keypoints(kpts, matrix, height, width):
    if not kpts:
        return []
    arr = to_array(kpts)
    xy = warp_points(matrix, arr[:, :2])
    inside = (xy[:, 0] >= -0.5) & (xy[:, 0] < width - 0.5) & (xy[:, 1] >= -0.5) & (xy[:, 1] < height - 0.5)
    xy = np.clip(xy, 0.0, [width - 1, height - 1])
    return [Keypoint(float(x), float(y), float(s)) for (x, y), s, ok in zip(xy, arr[:, 2], inside) if ok]


def augment(sample, cfg, rng):
    """Same geometric warp for both images and the keypoints; independent photometric jitter."""
    H, W = sample.sharp.shape[:2]
    S = cfg.crop
    matrix = sample_geometry(rng, cfg, H, W)
    if cfg.geometric:
        sharp = warp_image(sample.sharp, matrix, S, S)
        blurred = warp_image(sample.blurred, matrix, S, S)
    else:
        ox, oy = int(-matrix[0, 2]), int(-matrix[1, 2])
        sharp = sample.sharp[oy:oy + S, ox:ox + S].copy()
        blurred = sample.blurred[oy:oy + S, ox:ox + S].copy()
    kpts = transform_keypoints(sample.gt_keypoints, matrix, S, S)
    if cfg.photometric:
        sharp = photometric_jitter(sharp, cfg, rng)
        blurred = photometric_jitter(blurred, cfg, rng)
    return TrainingSample(sharp, blurred, kpts)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainLog:
    epoch_losses: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    seconds: float = 0.0


def _stream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def train_step(model, batch, params, state, lr, sigma, dtype=np.float32):
    """Forward/backward over a batch (gradients averaged), then one Adam step."""
    model.zero_grad()
    total = 0.0
    for image, kpts in batch:
        H, W = image.shape[:2]
        target = Tensor(render_heatmap(kpts, H, W, sigma), dtype=dtype)
        with tg.Graph() as g:
            loss = tg.mse_loss(score_map(model, image), target)
        value = loss.item()
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite training loss {value} at Adam step {state.t + 1}")
        tg.backward(g, loss, seed=1.0 / len(batch))
        total += value
        del g
    tg.adam_step(params, state, lr)
    return total / len(batch)


def train(dataset, tc, ac, model, progress=None):
    """Seeded epochs of shuffle -> augment -> score_map -> MSE -> Adam.

    Each sample's augmentation draws from a stream keyed by (seed, epoch,
    sample index), so results do not depend on execution schedule. The model
    is updated in place and returned with the loss log.
    """
    if not dataset:
        raise ValueError("training needs a non-empty dataset")
    kernels.tune_allocator()
    params = model.parameters()
    state = tg.AdamState.for_params(params)
    out = TrainLog()
    t0 = time.perf_counter()
    dtype = params[0].dtype
    for epoch in range(1, tc.epochs + 1):
        lr = lr_schedule(epoch, tc)
        order = _stream(tc.seed, epoch, 0).permutation(len(dataset))
        epoch_losses = []
        for start in range(0, len(order), tc.batch_size):
            batch = []
            for idx in order[start:start + tc.batch_size]:
                rng = _stream(tc.seed, epoch, 1, int(idx))
                s = augment(dataset[idx], ac, rng)
                use_sharp = rng.random() < tc.mix_sharp
                batch.append((s.sharp if use_sharp else s.blurred, s.gt_keypoints))
            value = train_step(model, batch, params, state, lr, tc.sigma_gt, dtype)
            out.step_losses.append(value)
            epoch_losses.append(value)
            if progress is not None:
                progress(epoch, state.t, value)
        out.epoch_losses.append(float(np.mean(epoch_losses)))
        log.info("epoch %d lr %.3g loss %.6f", epoch, lr, out.epoch_losses[-1])
    out.seconds = time.perf_counter() - t0
    return model, out


__all__ = [
    "AugmentConfig", "TrainConfig", "TrainLog", "TrainingSample", "augment", "corner_response",
    "detect_reference_keypoints", "lr_schedule", "mse_loss", "render_heatmap", "train",
    "train_step",
]
