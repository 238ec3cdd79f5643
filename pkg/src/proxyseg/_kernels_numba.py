"""Numba-jitted kernel implementations.

Hot path selected by default when numba imports (see backend.py). Twins of
_kernels_numpy: identical signatures and accumulation semantics. All loops
accumulate in float64; matmul walks k in ascending order per output element
so results are bit-reproducible and match the numpy fallback exactly.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.empty((m, n), dtype=a.dtype)
    acc = np.empty(n, dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc[j] = 0.0
        for p in range(k):
            aip = np.float64(a[i, p])
            for j in range(n):
                acc[j] += aip * np.float64(b[p, j])
        for j in range(n):
            out[i, j] = acc[j]
    return out


@njit(cache=True, nogil=True)
def softmax_rows(x):
    r, l = x.shape
    out = np.zeros_like(x)
    for i in range(r):
        m = -np.inf
        for j in range(l):
            if x[i, j] > m:
                m = x[i, j]
        if m == -np.inf:
            return out, i
        s = 0.0
        for j in range(l):
            e = np.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        for j in range(l):
            out[i, j] = out[i, j] / s
    return out, -1


@njit(cache=True, nogil=True)
def l2norm_rows(x, eps):
    r, d = x.shape
    out = np.empty_like(x)
    for i in range(r):
        s = 0.0
        for j in range(d):
            v = np.float64(x[i, j])
            s += v * v
        norm = np.sqrt(s) + eps
        for j in range(d):
            out[i, j] = np.float64(x[i, j]) / norm
    return out


@njit(cache=True, nogil=True)
def layernorm_rows(x, w, b, eps):
    r, d = x.shape
    out = np.empty_like(x)
    for i in range(r):
        s = 0.0
        for j in range(d):
            s += np.float64(x[i, j])
        mean = s / d
        v = 0.0
        for j in range(d):
            dx = np.float64(x[i, j]) - mean
            v += dx * dx
        var = v / d
        inv = 1.0 / np.sqrt(var + eps)
        for j in range(d):
            y = (np.float64(x[i, j]) - mean) * inv
            out[i, j] = y * np.float64(w[j]) + np.float64(b[j])
    return out


@njit(cache=True, nogil=True)
def bilinear_resize(x, out_h, out_w):
    in_h, in_w, d = x.shape
    scale_y = in_h / out_h
    scale_x = in_w / out_w
    out = np.empty((out_h, out_w, d), dtype=x.dtype)
    for oy in range(out_h):
        sy = (oy + 0.5) * scale_y - 0.5
        if sy < 0.0:
            sy = 0.0
        if sy > in_h - 1.0:
            sy = in_h - 1.0
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, in_h - 1)
        wy = sy - y0
        for ox in range(out_w):
            sx = (ox + 0.5) * scale_x - 0.5
            if sx < 0.0:
                sx = 0.0
            if sx > in_w - 1.0:
                sx = in_w - 1.0
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, in_w - 1)
            wx = sx - x0
            w00 = (1.0 - wy) * (1.0 - wx)
            w01 = (1.0 - wy) * wx
            w10 = wy * (1.0 - wx)
            w11 = wy * wx
            for c in range(d):
                top = np.float64(x[y0, x0, c]) * w00 + np.float64(x[y0, x1, c]) * w01
                bot = np.float64(x[y1, x0, c]) * w10 + np.float64(x[y1, x1, c]) * w11
                out[oy, ox, c] = top + bot
    return out


@njit(cache=True, nogil=True)
def mean_all(x):
    s = 0.0
    for i in range(x.size):
        s += np.float64(x[i])
    return s / x.size
