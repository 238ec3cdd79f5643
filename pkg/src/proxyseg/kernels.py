"""Dense-tensor kernels: the only module where raw numerics live.

All operations are pure functions on numpy arrays (row-major float32 is the
pipeline's storage dtype; float64 passes through for callers needing extra
headroom). Reductions accumulate in float64 with a deterministic order, so
repeated runs are bit-identical. Heavy loops dispatch to the numba or numpy
implementation selected in backend.py.
"""

import numpy as np

from .backend import kernels_module
from .errors import ProxysegError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)


def _as_float(a):
    a = np.asarray(a)
    if a.dtype not in _FLOAT_DTYPES:
        a = a.astype(np.float32)
    return np.ascontiguousarray(a)


def matmul(a, b):
    """Matrix product with float64 accumulation in fixed k-order."""
    a = _as_float(a)
    b = _as_float(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    dtype = np.promote_types(a.dtype, b.dtype)
    return kernels_module().matmul(a.astype(dtype, copy=False), b.astype(dtype, copy=False))


def softmax_masked(scores, mask=None):
    """Row-wise softmax over the last axis, with optional additive mask.

    Mask entries are 0 or -inf; -inf positions come out exactly 0. A row
    with every position masked has no valid distribution and raises.
    """
    scores = _as_float(scores)
    if scores.ndim < 1:
        raise ShapeError("softmax_masked expects at least 1-d scores")
    operand = scores.astype(np.float64)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.ndim != 2:
            raise ShapeError(f"mask must be 2-d, got shape {mask.shape}")
        if scores.ndim < 2:
            raise ShapeError("masked softmax needs scores with a trailing LxL block")
        try:
            operand = operand + mask.astype(np.float64)
        except ValueError:
            raise ShapeError(
                f"mask shape {mask.shape} does not broadcast to scores shape {scores.shape}"
            ) from None
    l = operand.shape[-1]
    flat = np.ascontiguousarray(operand.reshape(-1, l))
    out, bad = kernels_module().softmax_rows(flat)
    if bad >= 0:
        raise ProxysegError(f"softmax row {bad} is fully masked (all -inf)")
    return out.reshape(operand.shape).astype(scores.dtype)


def l2_normalize_rows(t, eps=1e-12):
    """Scale each row to unit Euclidean norm; near-zero rows stay zero."""
    t = _as_float(t)
    if t.ndim != 2:
        raise ShapeError(f"l2_normalize_rows expects a 2-d array, got {t.shape}")
    return kernels_module().l2norm_rows(t, float(eps))


def layer_norm(t, weight, bias, eps=1e-5):
    """Per-row standardization followed by an elementwise affine."""
    t = _as_float(t)
    weight = _as_float(weight)
    bias = _as_float(bias)
    if t.ndim != 2:
        raise ShapeError(f"layer_norm expects a 2-d array, got {t.shape}")
    if weight.shape != (t.shape[1],) or bias.shape != (t.shape[1],):
        raise ShapeError(
            f"layer_norm affine shapes {weight.shape}/{bias.shape} do not match width {t.shape[1]}"
        )
    return kernels_module().layernorm_rows(t, weight, bias, float(eps))


def bilinear_resize_grid(t, out_h, out_w):
    """Resample an (H, W, D) grid to (out_h, out_w, D).

    Half-pixel-center sampling: src = (dst + 0.5) * (in / out) - 0.5,
    clamped to the valid range, then a 4-neighbor blend per channel.
    """
    t = _as_float(t)
    if t.ndim != 3:
        raise ShapeError(f"bilinear_resize_grid expects (H, W, D), got {t.shape}")
    out_h, out_w = int(out_h), int(out_w)
    if min(t.shape[0], t.shape[1], out_h, out_w) < 1:
        raise ShapeError("bilinear_resize_grid extents must be >= 1")
    if (out_h, out_w) == t.shape[:2]:
        return t.copy()
    return kernels_module().bilinear_resize(t, out_h, out_w)


def mean_all(t):
    """Arithmetic mean of every entry, accumulated in float64."""
    t = _as_float(t)
    if t.size == 0:
        raise ShapeError("mean_all of an empty tensor")
    return kernels_module().mean_all(t.ravel())
