"""Pure-numpy kernel implementations.

Fallback path for environments without numba, selected via PROXYSEG_BACKEND.
Each function mirrors its twin in _kernels_numba exactly: same signatures,
same accumulation dtype, and for matmul/bilinear the same per-element
operation order, so the two backends agree bit-for-bit there.
"""

import numpy as np


def matmul(a, b):
    # K outer-product steps keep the per-element accumulation order
    # (ascending k, float64) identical to the jitted triple loop.
    m, k = a.shape
    n = b.shape[1]
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    acc = np.zeros((m, n), dtype=np.float64)
    for p in range(k):
        acc += a64[:, p : p + 1] * b64[p]
    return acc.astype(a.dtype)


def softmax_rows(x):
    # x: (R, L) float64. Returns (out, index of first all -inf row or -1).
    m = np.max(x, axis=1)
    bad = np.nonzero(m == -np.inf)[0]
    if bad.size:
        return np.zeros_like(x), int(bad[0])
    e = np.exp(x - m[:, None])
    s = np.sum(e, axis=1)
    return e / s[:, None], -1


def l2norm_rows(x, eps):
    x64 = x.astype(np.float64)
    norm = np.sqrt(np.sum(x64**2, axis=1)) + eps
    return (x64 / norm[:, None]).astype(x.dtype)


def layernorm_rows(x, w, b, eps):
    x64 = x.astype(np.float64)
    mean = np.mean(x64, axis=1, keepdims=True)
    var = np.mean((x64 - mean) ** 2, axis=1, keepdims=True)
    y = (x64 - mean) / np.sqrt(var + eps)
    return (y * w.astype(np.float64) + b.astype(np.float64)).astype(x.dtype)


def bilinear_resize(x, out_h, out_w):
    in_h, in_w, d = x.shape
    scale_y = in_h / out_h
    scale_x = in_w / out_w

    sy = np.minimum(np.maximum((np.arange(out_h) + 0.5) * scale_y - 0.5, 0.0), in_h - 1.0)
    sx = np.minimum(np.maximum((np.arange(out_w) + 0.5) * scale_x - 0.5, 0.0), in_w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = sy - y0
    wx = sx - x0

    x64 = x.astype(np.float64)
    top = x64[y0][:, x0] * ((1.0 - wy)[:, None] * (1.0 - wx)[None, :])[:, :, None] + x64[y0][
        :, x1
    ] * ((1.0 - wy)[:, None] * wx[None, :])[:, :, None]
    bot = x64[y1][:, x0] * (wy[:, None] * (1.0 - wx)[None, :])[:, :, None] + x64[y1][:, x1] * (
        wy[:, None] * wx[None, :]
    )[:, :, None]
    return (top + bot).astype(x.dtype)


def mean_all(x):
    # x: 1-D. Sequential float64 accumulation is the contract; numpy's
    # pairwise sum stays far inside the 1e-9 agreement bound.
    return float(np.sum(x, dtype=np.float64) / x.size)
