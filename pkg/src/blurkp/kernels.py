"""Hot-kernel dispatch.

The compiled extension ``blurkp._ckernels`` is used when it was built and
imports cleanly; otherwise the NumPy implementations in ``_pykernels`` are
used. Setting ``BLURKP_PURE_PYTHON=1`` forces the fallback. Both backends
produce the same results up to floating-point summation order.
"""

import os

import numpy as np

from . import _pykernels

_impl = _pykernels
BACKEND = "python"

if os.environ.get("BLURKP_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def backends():
    """Names of the kernel backends importable in this environment."""
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name=None):
    """Return the kernel module for ``name`` (``None`` means the active one)."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def _flat(a):
    return np.ascontiguousarray(a).reshape(-1)


def gelu_forward(x, backend=None):
    impl = get_backend(backend)
    if impl is _pykernels:
        return _pykernels.gelu_forward(x)
    return impl.gelu_forward(_flat(x)).reshape(x.shape)


def gelu_backward(x, gout, backend=None):
    impl = get_backend(backend)
    if impl is _pykernels:
        return _pykernels.gelu_backward(x, gout)
    gout = gout.astype(x.dtype, copy=False)
    return impl.gelu_backward(_flat(x), _flat(gout)).reshape(x.shape)


def layer_norm_forward(x2d, gamma, beta, eps, backend=None):
    impl = get_backend(backend)
    dt = x2d.dtype
    return impl.layer_norm_forward(
        np.ascontiguousarray(x2d),
        np.ascontiguousarray(gamma, dtype=dt),
        np.ascontiguousarray(beta, dtype=dt),
        float(eps),
    )


def layer_norm_backward(gout2d, xhat, rstd, gamma, backend=None):
    impl = get_backend(backend)
    dt = xhat.dtype
    return impl.layer_norm_backward(
        np.ascontiguousarray(gout2d, dtype=dt),
        xhat,
        rstd,
        np.ascontiguousarray(gamma, dtype=dt),
    )


def greedy_match(cand_i, cand_j, n_ref, n_tgt, backend=None):
    impl = get_backend(backend)
    return impl.greedy_match(
        np.ascontiguousarray(cand_i, dtype=np.intp),
        np.ascontiguousarray(cand_j, dtype=np.intp),
        int(n_ref),
        int(n_tgt),
    )


def nms_disk(ys, xs, height, width, radius, backend=None):
    impl = get_backend(backend)
    return impl.nms_disk(
        np.ascontiguousarray(ys, dtype=np.intp),
        np.ascontiguousarray(xs, dtype=np.intp),
        int(height),
        int(width),
        float(radius),
    )


def splat_bilinear(xs, ys, weights, k, backend=None):
    impl = get_backend(backend)
    return impl.splat_bilinear(
        np.ascontiguousarray(xs, dtype=np.float64),
        np.ascontiguousarray(ys, dtype=np.float64),
        np.ascontiguousarray(weights, dtype=np.float64),
        int(k),
    )


_TUNED = False


def tune_allocator():
    """Keep large temporaries in the glibc heap instead of fresh mmaps.

    Training allocates and frees the same multi-megabyte activations every
    step; without this each one is a page-faulting mmap/munmap pair. No-op on
    platforms without glibc ``mallopt``.
    """
    global _TUNED
    if _TUNED:
        return True
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
        m_trim_threshold, m_top_pad, m_mmap_threshold = -1, -2, -3
        ok = libc.mallopt(m_mmap_threshold, 1 << 30) and libc.mallopt(m_trim_threshold, 1 << 30)
        libc.mallopt(m_top_pad, 64 << 20)
    except (OSError, AttributeError):
        return False
    _TUNED = bool(ok)
    return _TUNED
