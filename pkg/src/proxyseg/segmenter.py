"""Sliding-window segmentation: tiling, patch classification, stitching.

A resized image is covered by overlapping square windows. Each window's
dense joint-space embeddings are scored against the text embeddings, the
patch-grid logits are upsampled to window pixels, and overlapping
contributions are averaged before the final per-pixel argmax.
"""

from dataclasses import dataclass

import numpy as np

from .attention import apply_attention, attention_scores
from .errors import ProxysegError, ShapeError
from .kernels import bilinear_resize_grid, matmul


@dataclass(frozen=True)
class WindowRect:
    """Square pixel rectangle, inclusive-exclusive, inside the resized image."""

    x0: int
    y0: int
    w: int
    h: int


def tile_windows(h, w, window, stride):
    """Window rects at offsets 0, stride, 2*stride, ... per axis.

    The final offset per axis is clamped to dim - window so the border is
    always covered; duplicate offsets collapse. A stride wider than the
    window would leave interior gaps, so the step is capped at the window
    size: every pixel ends up inside at least one rect.
    """
    if window < 1 or stride < 1:
        raise ShapeError(f"window and stride must be >= 1, got window={window} stride={stride}")
    if window > h or window > w:
        raise ShapeError(f"window {window} larger than image {h}x{w}")
    step = min(stride, window)

    def offsets(dim):
        offs = list(range(0, dim - window + 1, step))
        if offs[-1] != dim - window:
            offs.append(dim - window)
        return offs

    return [WindowRect(x0, y0, window, window) for y0 in offsets(h) for x0 in offsets(w)]


def classify_patches(z_v, text):
    """Cosine logits of each patch embedding against every class embedding."""
    z_v = np.asarray(z_v)
    emb = text.embeddings
    if z_v.ndim != 2 or z_v.shape[1] != emb.shape[1]:
        raise ShapeError(
            f"patch embeddings {z_v.shape} do not match text embeddings {emb.shape}"
        )
    return matmul(np.ascontiguousarray(z_v, np.float32), np.ascontiguousarray(emb.T))


@dataclass
class LogitCanvas:
    """Running per-pixel logit sum and window hit count."""

    sum: np.ndarray  # (H, W, C) float64
    count: np.ndarray  # (H, W, 1) int64

    @classmethod
    def empty(cls, h, w, classes):
        return cls(
            sum=np.zeros((h, w, classes), dtype=np.float64),
            count=np.zeros((h, w, 1), dtype=np.int64),
        )


@dataclass(frozen=True)
class SegmentationMap:
    """Final per-pixel class indices."""

    labels: np.ndarray  # (H, W) int32


def stitch(windows, canvas):
    """Add each window's patch-grid logits, upsampled to pixels, into the canvas.

    Window order is the accumulation order, which keeps the float sum
    deterministic regardless of how the per-window logits were computed.
    """
    ch, cw, _ = canvas.sum.shape
    for rect, logits in windows:
        if rect.x0 < 0 or rect.y0 < 0 or rect.x0 + rect.w > cw or rect.y0 + rect.h > ch:
            raise ShapeError(f"window rect {rect} falls outside the {ch}x{cw} canvas")
        logits = np.asarray(logits)
        if logits.ndim != 3:
            raise ShapeError(f"expected patch-grid logits (rows, cols, classes), got {logits.shape}")
        pixels = bilinear_resize_grid(np.ascontiguousarray(logits, np.float32), rect.h, rect.w)
        canvas.sum[rect.y0 : rect.y0 + rect.h, rect.x0 : rect.x0 + rect.w] += pixels
        canvas.count[rect.y0 : rect.y0 + rect.h, rect.x0 : rect.x0 + rect.w] += 1
    return canvas


def finalize(canvas, background_threshold=None):
    """Average overlaps and take the per-pixel argmax (ties to lowest index).

    With background_threshold set, pixels whose best mean logit falls below
    it are reassigned to class 0.
    """
    if (canvas.count == 0).any():
        raise ProxysegError("canvas has uncovered pixels (count = 0); stitch every window first")
    mean = canvas.sum / canvas.count
    labels = np.argmax(mean, axis=-1).astype(np.int32)
    if background_threshold is not None:
        best = np.max(mean, axis=-1)
        labels[best < background_threshold] = 0
    return SegmentationMap(labels=labels)


def run_pipeline(bundle, weights, text, cfg, background_threshold=None):
    """Full per-image flow: attention, reprojection, classification, stitching."""
    h, w = bundle.resized_size
    canvas = LogitCanvas.empty(h, w, len(text.class_names))
    tiles = []
    for win in bundle.windows:
        attn = attention_scores(win, cfg)
        z_v = apply_attention(attn.attn, win.v_clip, win.v_grid, weights, attn.grid)
        logits = classify_patches(z_v, text)
        gh, gw = attn.grid
        tiles.append((WindowRect(*win.rect), logits.reshape(gh, gw, -1)))
    stitch(tiles, canvas)
    return finalize(canvas, background_threshold=background_threshold)
