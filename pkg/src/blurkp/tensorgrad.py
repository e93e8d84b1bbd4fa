"""Minimal dense tensors with tape-based reverse-mode differentiation.

Tensors are rank <= 3 NumPy arrays laid out row-major with the channel axis
fastest (H x W x C). Operations executed inside a ``Graph`` context whose
inputs require gradients are appended to the graph's tape; ``backward`` walks
the tape in exact reverse order. Outside a graph, operations run forward only
and keep no caches.

    with Graph() as g:
        y = gelu(dense_channels(x, w, b))
        loss = sum_all(y)
    backward(g, loss)
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from . import kernels

__all__ = [
    "Tensor", "Graph", "backward", "gradcheck", "AdamState", "adam_step",
    "dense_channels", "dense_spatial", "gelu", "layer_norm", "softmax_channels",
    "maxpool2", "add", "mul", "scale_channels", "sigmoid", "mean_spatial",
    "sum_all", "mse_loss", "channel_slice", "concat_channels", "rearrange",
    "crop",
]

MAX_RANK = 3


class Tensor:
    """A dense array that may take part in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_leaf")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim > MAX_RANK:
            raise ValueError(f"tensor rank {arr.ndim} exceeds {MAX_RANK}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._leaf = True
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    @classmethod
    def _result(cls, data, requires_grad):
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t._leaf = False
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._leaf

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def is_finite(self):
        ok = bool(np.isfinite(self.data).all())
        if self.grad is not None:
            ok = ok and bool(np.isfinite(self.grad).all())
        return ok

    def check_finite(self):
        if not self.is_finite():
            label = self.name or "tensor"
            raise FloatingPointError(f"{label} holds non-finite values")

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_state = threading.local()


def _active_graph():
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Graph:
    """Tape of executed operations, in forward order."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        self.nodes.clear()


def _emit(data, inputs, backward_fn):
    """Wrap ``data`` as an op result and record it when a graph is active."""
    requires = any(t.requires_grad for t in inputs)
    out = Tensor._result(data, requires)
    graph = _active_graph()
    if requires and graph is not None:
        graph.nodes.append(_Node(out, inputs, backward_fn))
    return out


def _needs_cache():
    return _active_graph() is not None


def backward(graph, loss, seed=1.0):
    """Populate ``.grad`` of every leaf reached from the scalar ``loss``.

    Leaf gradients accumulate across calls; call ``zero_grad`` to reset.
    ``seed`` scales the incoming gradient (useful for averaging over a batch).
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    pending = {id(loss): np.full(loss.shape, seed, dtype=loss.dtype)}
    if loss.is_leaf:
        if loss.requires_grad:
            loss.grad += pending[id(loss)]
        return
    for node in reversed(graph.nodes):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t.is_leaf:
                t.grad += gi
            else:
                key = id(t)
                prev = pending.get(key)
                pending[key] = gi if prev is None else prev + gi


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# operations


def dense_channels(x, w, b):
    """Affine map of the last axis: ``out[..., :] = x[..., :] @ w + b``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ValueError(f"dense_channels: input channels {x.shape[-1]} do not match weight {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"dense_channels: bias shape {b.shape} does not match weight {w.shape}")
    cin, cout = w.shape
    x2 = x.data.reshape(-1, cin)
    out = x2 @ w.data
    out += b.data
    out = out.reshape(x.shape[:-1] + (cout,))

    def back(g):
        g2 = g.reshape(-1, cout)
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _emit(out, (x, w, b), back)


def dense_spatial(u, w, b):
    """Affine map along the middle (position) axis of a G x L x C tensor.

    ``out[g, :, c] = u[g, :, c] @ w + b`` with ``w`` of shape L x L.
    """
    if u.ndim != 3:
        raise ValueError(f"dense_spatial expects G x L x C, got {u.shape}")
    G, L, C = u.shape
    if w.shape != (L, L) or b.shape != (L,):
        raise ValueError(f"dense_spatial: weights {w.shape}/{b.shape} do not fit L={L}")
    ut = u.data.transpose(0, 2, 1).reshape(-1, L)
    out = (ut @ w.data + b.data).reshape(G, C, L).transpose(0, 2, 1)

    def back(g):
        gt = g.transpose(0, 2, 1).reshape(-1, L)
        gu = (gt @ w.data.T).reshape(G, C, L).transpose(0, 2, 1) if u.requires_grad else None
        gw = ut.T @ gt if w.requires_grad else None
        gb = gt.sum(axis=0) if b.requires_grad else None
        return gu, gw, gb

    return _emit(np.ascontiguousarray(out), (u, w, b), back)


def gelu(x):
    """GELU, tanh approximation."""
    out = kernels.gelu_forward(x.data)

    def back(g):
        return (kernels.gelu_backward(x.data, g),)

    return _emit(out, (x,), back)


def sigmoid(x):
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def back(g):
        return (g * out * (1.0 - out),)

    return _emit(out, (x,), back)


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize each position over its channels, then scale and shift."""
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"layer_norm: gamma/beta must have shape ({C},)")
    y, xhat, rstd = kernels.layer_norm_forward(x.data.reshape(-1, C), gamma.data, beta.data, eps)
    out = y.reshape(x.shape)
    if not _needs_cache():
        xhat = rstd = None

    def back(g):
        gx, dgamma, dbeta = kernels.layer_norm_backward(g.reshape(-1, C), xhat, rstd, gamma.data)
        return gx.reshape(x.shape), dgamma, dbeta

    return _emit(out, (x, gamma, beta), back)


def softmax_channels(x):
    """Softmax over the last axis, stabilized by subtracting the per-position max."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _emit(out, (x,), back)


def maxpool2(x):
    """2 x 2 non-overlapping max pool; ties resolve to the first element in row-major order."""
    if x.ndim != 3:
        raise ValueError(f"maxpool2 expects H x W x C, got {x.shape}")
    H, W, C = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"maxpool2 needs even extents, got {H}x{W}")
    # window axis ordered (0,0), (0,1), (1,0), (1,1)
    win = x.data.reshape(H // 2, 2, W // 2, 2, C).transpose(0, 2, 4, 1, 3).reshape(H // 2, W // 2, C, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def back(g):
        gw = np.zeros((H // 2, W // 2, C, 4), dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(H // 2, W // 2, C, 2, 2).transpose(0, 3, 1, 4, 2).reshape(H, W, C)
        return (gx,)

    return _emit(np.ascontiguousarray(out), (x,), back)


def add(a, b):
    _check_same_shape(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a, b):
    """Elementwise product of equally shaped tensors."""
    _check_same_shape(a, b, "mul")

    def back(g):
        return (g * b.data if a.requires_grad else None, g * a.data if b.requires_grad else None)

    return _emit(a.data * b.data, (a, b), back)


def scale_channels(x, w):
    """Multiply every position of ``x`` by the per-channel vector ``w``."""
    if w.shape != (x.shape[-1],):
        raise ValueError(f"scale_channels: gate shape {w.shape} vs channels {x.shape[-1]}")
    axes = tuple(range(x.ndim - 1))

    def back(g):
        gx = g * w.data if x.requires_grad else None
        gw = (g * x.data).sum(axis=axes) if w.requires_grad else None
        return gx, gw

    return _emit(x.data * w.data, (x, w), back)


def mean_spatial(x):
    """Average over every axis but the last: H x W x C -> C."""
    axes = tuple(range(x.ndim - 1))
    n = x.size // x.shape[-1]

    def back(g):
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _emit(x.data.mean(axis=axes), (x,), back)


def sum_all(x):
    return _emit(np.asarray(x.data.sum()).reshape(()), (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def mse_loss(r, target):
    """Mean of squared differences between a response and a fixed target."""
    _check_same_shape(r, target, "mse_loss")
    diff = r.data - target.data
    n = diff.size

    def back(g):
        gr = (2.0 / n) * g * diff if r.requires_grad else None
        gt = (-2.0 / n) * g * diff if target.requires_grad else None
        return gr, gt

    value = np.asarray(np.mean(diff * diff), dtype=r.dtype).reshape(())
    return _emit(value, (r, target), back)


def channel_slice(x, start, stop):
    C = x.shape[-1]
    if not 0 <= start < stop <= C:
        raise ValueError(f"channel_slice [{start}:{stop}] out of range for {C} channels")
    out = np.ascontiguousarray(x.data[..., start:stop])

    def back(g):
        gx = np.zeros_like(x.data)
        gx[..., start:stop] = g
        return (gx,)

    return _emit(out, (x,), back)


def concat_channels(parts):
    parts = tuple(parts)
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.shape[:-1] != lead:
            raise ValueError("concat_channels: leading extents differ")
    bounds = np.cumsum([0] + [p.shape[-1] for p in parts])

    def back(g):
        return tuple(np.ascontiguousarray(g[..., bounds[k]:bounds[k + 1]]) for k in range(len(parts)))

    return _emit(np.concatenate([p.data for p in parts], axis=-1), parts, back)


def rearrange(x, split_shape, perm, out_shape):
    """Reshape to ``split_shape``, transpose by ``perm``, reshape to ``out_shape``.

    Used for the partition and depth/space permutations; the gradient applies
    the inverse permutation.
    """
    inv = np.argsort(perm)
    permuted_shape = tuple(split_shape[p] for p in perm)
    out = np.ascontiguousarray(x.data.reshape(split_shape).transpose(perm)).reshape(out_shape)

    def back(g):
        gx = g.reshape(permuted_shape).transpose(inv)
        return (np.ascontiguousarray(gx).reshape(x.shape),)

    return _emit(out, (x,), back)


def crop(x, height, width):
    """Keep the top-left ``height`` x ``width`` window of an H x W x C tensor."""
    H, W = x.shape[:2]
    if height > H or width > W:
        raise ValueError(f"crop {height}x{width} exceeds {H}x{W}")
    if (height, width) == (H, W):
        return x
    out = np.ascontiguousarray(x.data[:height, :width])

    def back(g):
        gx = np.zeros_like(x.data)
        gx[:height, :width] = g
        return (gx,)

    return _emit(out, (x,), back)


# ---------------------------------------------------------------------------
# verification and optimization


def gradcheck(op, input_shapes, seed, wrt=(), step=1e-5, low=-2.0, high=2.0):
    """Worst relative error between analytic and central-difference gradients.

    ``op`` receives one float64 tensor per entry of ``input_shapes`` (drawn
    uniformly from [low, high] with ``seed``) and returns a tensor. ``wrt``
    lists further leaf tensors (block parameters) whose gradients are checked
    too; they are converted to float64 in place. The scalar probed is
    ``sum(op(...) * R)`` for a fixed random ``R`` so that no output direction
    is trivially constant; central differences are taken on the outputs
    before that reduction. Relative error is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    rng = np.random.default_rng(seed)
    inputs = [Tensor(rng.uniform(low, high, size=s), requires_grad=True, dtype=np.float64)
              for s in input_shapes]
    extra = list(wrt)
    for t in extra:
        t.data = t.data.astype(np.float64)
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)

    probe = None

    def evaluate():
        nonlocal probe
        out = op(*inputs)
        if probe is None:
            probe = Tensor(rng.standard_normal(out.shape), dtype=np.float64)
        return out

    with Graph() as g:
        out = evaluate()
        loss = sum_all(mul(out, probe))
    backward(g, loss)

    def f():
        return op(*inputs).data

    worst = 0.0
    for t in inputs + extra:
        flat = t.data.reshape(-1)
        analytic = t.grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            fp = f()
            flat[k] = orig - step
            fm = f()
            flat[k] = orig
            # difference outputs before reducing so untouched entries cancel exactly
            num = float(np.sum((fp - fm) * probe.data)) / (2.0 * step)
            a = analytic[k]
            err = abs(a - num) / max(1e-8, abs(a) + abs(num))
            worst = max(worst, err)
    return worst


@dataclass
class AdamState:
    """First/second moment buffers per parameter and the step counter."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], 0)


def adam_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, grads=None):
    """One bias-corrected Adam update, in place on ``params[i].data``.

    Gradients default to each parameter's ``.grad``. A non-finite gradient
    rejects the whole step before anything is modified.
    """
    if grads is None:
        grads = [p.grad for p in params]
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("adam_step: params, grads and state disagree in length")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} vs parameter {p.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError(f"adam_step rejected: non-finite gradient for {p.name or 'parameter'}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state
