# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Signatures mirror ``_pykernels``."""

import numpy as np

cimport cython
from cython cimport floating
from libc.math cimport exp, expf, floor, sqrt

cdef double K0 = 0.7978845608028654
cdef double K1 = 0.044715


cdef inline floating _sig2(floating u) noexcept nogil:
    # sigmoid(2u) == 0.5 * (1 + tanh(u)); exponent clamped to stay finite
    cdef floating a = -2 * u
    if a > 80:
        a = 80
    if floating is float:
        return 1 / (1 + expf(a))
    else:
        return 1 / (1 + exp(a))


def gelu_forward(floating[::1] x):
    cdef Py_ssize_t i, n = x.shape[0]
    out_arr = np.empty(n, dtype=np.float32 if floating is float else np.float64)
    cdef floating[::1] out = out_arr
    cdef floating v
    cdef floating k0 = <floating>K0
    cdef floating k1 = <floating>K1
    with nogil:
        for i in range(n):
            v = x[i]
            out[i] = v * _sig2(k0 * (v + k1 * v * v * v))
    return out_arr


def gelu_backward(floating[::1] x, floating[::1] gout):
    cdef Py_ssize_t i, n = x.shape[0]
    out_arr = np.empty(n, dtype=np.float32 if floating is float else np.float64)
    cdef floating[::1] out = out_arr
    cdef floating v, v2, s
    cdef floating k0 = <floating>K0
    cdef floating k1 = <floating>K1
    with nogil:
        for i in range(n):
            v = x[i]
            v2 = v * v
            s = _sig2(k0 * v * (1 + k1 * v2))
            out[i] = gout[i] * (s + 2 * v * s * (1 - s) * k0 * (1 + 3 * k1 * v2))
    return out_arr


def layer_norm_forward(floating[:, ::1] x, floating[::1] gamma, floating[::1] beta, double eps):
    cdef Py_ssize_t r, c, rows = x.shape[0], cols = x.shape[1]
    dt = np.float32 if floating is float else np.float64
    y_arr = np.empty((rows, cols), dtype=dt)
    xhat_arr = np.empty((rows, cols), dtype=dt)
    rstd_arr = np.empty(rows, dtype=dt)
    cdef floating[:, ::1] y = y_arr
    cdef floating[:, ::1] xhat = xhat_arr
    cdef floating[::1] rstd = rstd_arr
    cdef double mean, var, d, inv
    with nogil:
        for r in range(rows):
            mean = 0.0
            for c in range(cols):
                mean += x[r, c]
            mean /= cols
            var = 0.0
            for c in range(cols):
                d = x[r, c] - mean
                var += d * d
            var /= cols
            inv = 1.0 / sqrt(var + eps)
            rstd[r] = <floating>inv
            for c in range(cols):
                d = (x[r, c] - mean) * inv
                xhat[r, c] = <floating>d
                y[r, c] = <floating>(d * gamma[c] + beta[c])
    return y_arr, xhat_arr, rstd_arr


def layer_norm_backward(floating[:, ::1] gout, floating[:, ::1] xhat, floating[::1] rstd,
                        floating[::1] gamma):
    cdef Py_ssize_t r, c, rows = gout.shape[0], cols = gout.shape[1]
    dt = np.float32 if floating is float else np.float64
    gx_arr = np.empty((rows, cols), dtype=dt)
    dgamma_arr = np.zeros(cols, dtype=np.float64)
    dbeta_arr = np.zeros(cols, dtype=np.float64)
    cdef floating[:, ::1] gx = gx_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef double c1, c2, gy
    with nogil:
        for r in range(rows):
            c1 = 0.0
            c2 = 0.0
            for c in range(cols):
                gy = gout[r, c] * gamma[c]
                c1 += gy
                c2 += gy * xhat[r, c]
                dgamma[c] += gout[r, c] * xhat[r, c]
                dbeta[c] += gout[r, c]
            c1 /= cols
            c2 /= cols
            for c in range(cols):
                gy = gout[r, c] * gamma[c]
                gx[r, c] = <floating>((gy - c1 - xhat[r, c] * c2) * rstd[r])
    return gx_arr, dgamma_arr.astype(dt), dbeta_arr.astype(dt)


def greedy_match(const Py_ssize_t[::1] cand_i, const Py_ssize_t[::1] cand_j,
                 Py_ssize_t n_ref, Py_ssize_t n_tgt):
    cdef Py_ssize_t k, i, j, m = 0, n = cand_i.shape[0]
    used_i_arr = np.zeros(n_ref, dtype=np.uint8)
    used_j_arr = np.zeros(n_tgt, dtype=np.uint8)
    acc_arr = np.empty(n, dtype=np.intp)
    cdef unsigned char[::1] used_i = used_i_arr
    cdef unsigned char[::1] used_j = used_j_arr
    cdef Py_ssize_t[::1] acc = acc_arr
    with nogil:
        for k in range(n):
            i = cand_i[k]
            j = cand_j[k]
            if used_i[i] or used_j[j]:
                continue
            used_i[i] = 1
            used_j[j] = 1
            acc[m] = k
            m += 1
    return acc_arr[:m].copy()


def nms_disk(const Py_ssize_t[::1] ys, const Py_ssize_t[::1] xs, Py_ssize_t height,
             Py_ssize_t width, double radius):
    cdef Py_ssize_t k, y, x, dy, dx, yy, xx, n = ys.shape[0]
    cdef Py_ssize_t r = <Py_ssize_t>floor(radius)
    cdef double r2 = radius * radius
    blocked_arr = np.zeros((height, width), dtype=np.uint8)
    keep_arr = np.zeros(n, dtype=bool)
    cdef unsigned char[:, ::1] blocked = blocked_arr
    cdef cython.uchar[::1] keep = keep_arr.view(np.uint8)
    with nogil:
        for k in range(n):
            y = ys[k]
            x = xs[k]
            if blocked[y, x]:
                continue
            keep[k] = 1
            for dy in range(-r, r + 1):
                yy = y + dy
                if yy < 0 or yy >= height:
                    continue
                for dx in range(-r, r + 1):
                    xx = x + dx
                    if xx < 0 or xx >= width or dy * dy + dx * dx > r2:
                        continue
                    blocked[yy, xx] = 1
    return keep_arr


def splat_bilinear(const double[::1] xs, const double[::1] ys, const double[::1] weights,
                   Py_ssize_t k):
    out_arr = np.zeros((k, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n, x0, y0, bad = 0, count = xs.shape[0]
    cdef double c = (k - 1) / 2.0, px, py, fx, fy, w
    with nogil:
        for n in range(count):
            px = xs[n] + c
            py = ys[n] + c
            x0 = <Py_ssize_t>floor(px)
            y0 = <Py_ssize_t>floor(py)
            fx = px - x0
            fy = py - y0
            w = weights[n]
            if not _deposit(out, y0, x0, w * (1 - fy) * (1 - fx), k):
                bad = 1
                break
            if not _deposit(out, y0, x0 + 1, w * (1 - fy) * fx, k):
                bad = 1
                break
            if not _deposit(out, y0 + 1, x0, w * fy * (1 - fx), k):
                bad = 1
                break
            if not _deposit(out, y0 + 1, x0 + 1, w * fy * fx, k):
                bad = 1
                break
    if bad:
        raise ValueError("trajectory sample falls outside the kernel support")
    return out_arr


cdef inline bint _deposit(double[:, ::1] out, Py_ssize_t y, Py_ssize_t x, double v,
                          Py_ssize_t k) noexcept nogil:
    if v == 0.0:
        return True
    if y < 0 or y >= k or x < 0 or x >= k:
        return False
    out[y, x] += v
    return True
