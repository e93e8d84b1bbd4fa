"""File formats: netpbm images, keypoint CSV, homography text, BALF model files, dataset manifests."""

from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evalkit import Homography
from .keypoint import Keypoint
from .model import Model, ModelConfig, build_model
from .tensorgrad import Tensor

LUMA = np.array([0.299, 0.587, 0.114])


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# PGM / PPM


def _header(buf):
    """Parse 'Px W H maxval' plus one whitespace byte; returns (magic, w, h, maxval, offset)."""
    fields, pos = [], 0
    while len(fields) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n?)*\s*").match(buf, pos)
        pos = m.end()
        tok = re.compile(rb"\S+").match(buf, pos)
        if tok is None:
            raise FormatError("malformed netpbm header: unexpected end of file")
        fields.append(tok.group())
        pos = tok.end()
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("malformed netpbm header: missing separator before pixel data")
    magic = fields[0].decode("ascii", "replace")
    if magic not in ("P5", "P6"):
        raise FormatError(f"unsupported netpbm type {magic!r} (need P5 or P6)")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise FormatError("malformed netpbm header: non-integer field") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"malformed netpbm header: {w}x{h} maxval {maxval}")
    return magic, w, h, maxval, pos + 1


def decode_netpbm(buf):
    magic, w, h, maxval, off = _header(buf)
    chans = 3 if magic == "P6" else 1
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * chans * dt.itemsize
    if len(buf) - off < need:
        raise FormatError(f"truncated pixel data: expected {need} bytes, got {len(buf) - off}")
    px = np.frombuffer(buf, dtype=dt, count=w * h * chans, offset=off).astype(np.float64) / maxval
    px = px.reshape(h, w, chans)
    if chans == 3:
        px = px @ LUMA
        px = px[:, :, None]
    return px


def read_image(path):
    """Grayscale image as an H x W x 1 float32 array in [0, 1]."""
    return decode_netpbm(Path(path).read_bytes()).astype(np.float32)


def encode_netpbm(arr, maxval=255):
    a = np.asarray(arr.data if isinstance(arr, Tensor) else arr, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim == 2:
        magic = "P5"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = "P6"
    else:
        raise ValueError(f"cannot encode array of shape {a.shape}")
    h, w = a.shape[:2]
    q = np.rint(np.clip(a, 0.0, 1.0) * maxval)
    payload = q.astype(">u2" if maxval > 255 else "u1").tobytes()
    return f"{magic}\n{w} {h}\n{maxval}\n".encode("ascii") + payload


def write_image(path, arr, maxval=255):
    """PGM for one channel, PPM for three; values clipped to [0, 1]."""
    Path(path).write_bytes(encode_netpbm(arr, maxval))


# ---------------------------------------------------------------------------
# keypoints / homographies / kernels


def parse_keypoints(text, source="<string>"):
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (2, 3):
            raise FormatError(f"{source}:{lineno}: expected 'x,y[,score]', got {raw.strip()!r}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise FormatError(f"{source}:{lineno}: non-numeric field in {raw.strip()!r}") from None
        if not all(np.isfinite(vals)):
            raise FormatError(f"{source}:{lineno}: non-finite value")
        out.append(Keypoint(vals[0], vals[1], vals[2] if len(vals) == 3 else 1.0))
    return out


def read_keypoints(path):
    return parse_keypoints(Path(path).read_text(), str(path))


def format_keypoints(kpts):
    return "".join(f"{k.x:.6f},{k.y:.6f},{k.score:.6f}\n" for k in kpts)


def write_keypoints(path, kpts):
    Path(path).write_text("# x,y,score\n" + format_keypoints(kpts))


def parse_homography(text):
    vals = text.split()
    if len(vals) != 9:
        raise FormatError(f"homography needs 9 values, got {len(vals)}")
    try:
        m = np.array([float(v) for v in vals]).reshape(3, 3)
    except ValueError:
        raise FormatError("homography contains a non-numeric value") from None
    return Homography(m)


def read_homography(path):
    return parse_homography(Path(path).read_text())


def write_homography(path, hm):
    m = hm.matrix if isinstance(hm, Homography) else np.asarray(hm)
    Path(path).write_text("\n".join(" ".join(f"{v:.17g}" for v in row) for row in m) + "\n")


def write_kernel(path, kern):
    w = kern.weights if hasattr(kern, "weights") else np.asarray(kern)
    np.savetxt(path, w, fmt="%.10e")


def read_kernel(path):
    from .blursynth import BlurKernel

    return BlurKernel(np.atleast_2d(np.loadtxt(path)))


# ---------------------------------------------------------------------------
# BALF model files

MAGIC = b"BALF"
VERSION = 1


def _config_ints(cfg):
    return [cfg.depth, *cfg.stage_channels, cfg.block_size, cfg.grid_size, cfg.head_hidden,
            cfg.se_reduction, cfg.expansion, cfg.gmlp_input_factor, int(cfg.use_rmab), cfg.in_channels]


def _config_from_ints(vals):
    depth = vals[0]
    if len(vals) != depth + 9:
        raise FormatError(f"config block has {len(vals)} ints, expected {depth + 9}")
    rest = vals[1 + depth:]
    return ModelConfig(depth=depth, stage_channels=tuple(vals[1:1 + depth]), block_size=rest[0],
                       grid_size=rest[1], head_hidden=rest[2], se_reduction=rest[3], expansion=rest[4],
                       gmlp_input_factor=rest[5], use_rmab=bool(rest[6]), in_channels=rest[7])


def serialize_model(m):
    """Layout (little-endian): magic, u32 version, u32 n + n x i32 config,
    u32 param count, then per parameter: u16 name length, name, u8 ndim,
    ndim x u32 shape, float32 payload."""
    cfg = _config_ints(m.config)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(cfg)), struct.pack(f"<{len(cfg)}i", *cfg),
              struct.pack("<I", len(m.params))]
    for name, t in m.params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack(f"<B{t.data.ndim}I", t.data.ndim, *t.data.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError("truncated model file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize_model(buf):
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("not a BALF model file (bad magic)")
    version, ncfg = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported BALF version {version} (this build reads {VERSION})")
    cfg = _config_from_ints(list(r.unpack(f"<{ncfg}i")))
    m = build_model(cfg)
    (count,) = r.unpack("<I")
    if count != len(m.params):
        raise FormatError(f"model file has {count} parameters, config implies {len(m.params)}")
    for expected, t in m.params.items():
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        if name != expected or tuple(shape) != t.data.shape:
            raise FormatError(f"parameter {name}{list(shape)} does not match {expected}{list(t.data.shape)}")
        size = int(np.prod(shape)) * 4
        t.data[...] = np.frombuffer(r.take(size), dtype="<f4").reshape(shape)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after model payload")
    return m


def save_model(path, m):
    Path(path).write_bytes(serialize_model(m))


def load_model(path):
    return deserialize_model(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# dataset manifest


@dataclass
class ManifestEntry:
    sharp: Path
    blurred: Path
    keypoints: Path | None = None


@dataclass
class DatasetManifest:
    root: Path
    entries: list = field(default_factory=list)


def read_manifest(path):
    """One entry per line: ``sharp blurred [keypoints]``, paths relative to the manifest."""
    path = Path(path)
    root = path.parent
    entries = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise FormatError(f"{path}:{lineno}: expected 'sharp blurred [keypoints]'")
        files = [root / p for p in parts]
        for f in files:
            if not f.is_file():
                raise FormatError(f"{path}:{lineno}: missing file {f}")
        entries.append(ManifestEntry(files[0], files[1], files[2] if len(files) == 3 else None))
    return DatasetManifest(root, entries)


def write_manifest(path, entries):
    root = Path(path).parent
    lines = []
    for e in entries:
        cols = [e.sharp, e.blurred] + ([e.keypoints] if e.keypoints is not None else [])
        lines.append(" ".join(os.path.relpath(c, root) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")


def load_samples(manifest, max_k=1000):
    """Decode every entry; entries without a keypoint file get built-in reference corners."""
    from .supervision import TrainingSample, detect_reference_keypoints

    out = []
    for e in manifest.entries:
        sharp = read_image(e.sharp)[:, :, 0]
        blurred = read_image(e.blurred)[:, :, 0]
        if sharp.shape != blurred.shape:
            raise FormatError(f"{e.sharp} and {e.blurred} differ in size")
        kpts = read_keypoints(e.keypoints) if e.keypoints else detect_reference_keypoints(sharp, max_k)
        out.append(TrainingSample(sharp, blurred, kpts))
    return out


__all__ = [
    "DatasetManifest", "FormatError", "ManifestEntry", "Model", "deserialize_model", "load_model",
    "load_samples", "read_homography", "read_image", "read_kernel", "read_keypoints", "read_manifest",
    "save_model", "serialize_model", "write_homography", "write_image", "write_kernel",
    "write_keypoints", "write_manifest",
]
