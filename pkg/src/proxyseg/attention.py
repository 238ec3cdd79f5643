"""Attention construction and value reprojection.

Builds an attention matrix from patch-feature correspondence (foundation
model features, or CLIP q/k ablation sources), sharpens it by shifting and
scaling the cosine similarities, suppresses weak pairs with an additive
mask, then pushes CLIP value embeddings through that attention and the
frozen projection stack into the joint vision-language space.

Score math runs in float64 internally so that shift invariance and the
adaptive/hard mask equivalence hold at tight tolerances; results are
returned as float32, the engine-wide array dtype.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ProxysegError, ShapeError
from .kernels import (
    bilinear_resize_grid,
    l2_normalize_rows,
    layer_norm,
    matmul,
    mean_all,
    softmax_masked,
)

MASK_MODES = ("adaptive", "hard", "none")
ATTN_SOURCES = ("proxy", "qq", "kk", "qk", "vanilla")


@dataclass(frozen=True)
class AttentionConfig:
    """Knobs for attention construction.

    beta shifts the similarity mean, gamma scales the result, alpha is the
    raw-cosine threshold used only by mask_mode="hard". scale_qk applies
    the 1/sqrt(d_head) factor in the qk and vanilla sources.
    """

    beta: float = 1.2
    gamma: float = 3.0
    mask_mode: str = "adaptive"
    alpha: float = 0.0
    attn_source: str = "proxy"
    scale_qk: bool = True

    def __post_init__(self):
        if self.mask_mode not in MASK_MODES:
            raise ConfigError("mask_mode", f"must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if self.attn_source not in ATTN_SOURCES:
            raise ConfigError("attn_source", f"must be one of {ATTN_SOURCES}, got {self.attn_source!r}")
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError("gamma", f"must be a finite positive number, got {self.gamma}")
        if not math.isfinite(self.beta):
            raise ConfigError("beta", f"must be finite, got {self.beta}")
        if self.mask_mode == "hard" and not math.isfinite(self.alpha):
            raise ConfigError("alpha", f"must be finite in hard mask mode, got {self.alpha}")


@dataclass(frozen=True)
class AttentionResult:
    """Attention weights plus bookkeeping.

    attn is (L, L) float32 shared across heads for proxy/qq/kk sources, or
    (n_heads, L, L) for the per-head qk/vanilla sources. grid gives the
    spatial layout (rows, cols) of the L attention positions.
    """

    attn: np.ndarray
    grid: tuple
    mask_fraction: float


def similarity(x):
    """Pairwise cosine similarity of rows: l2-normalize, then x_hat @ x_hat.T."""
    x64 = np.ascontiguousarray(np.asarray(x), dtype=np.float64)
    if x64.ndim != 2:
        raise ShapeError(f"expected a 2-d feature matrix, got shape {x64.shape}")
    xn = l2_normalize_rows(x64)
    return matmul(xn, np.ascontiguousarray(xn.T))


def normalize_similarity(s, beta, gamma):
    """Shift by beta times the global mean (diagonal included), scale by gamma."""
    s64 = np.asarray(s, dtype=np.float64)
    return gamma * (s64 - beta * mean_all(s64))


def build_mask(scores, mode, alpha=0.0):
    """Additive mask: 0 keeps an entry, -inf drops it.

    mode="adaptive" expects shifted-scaled scores and keeps entries >= 0;
    mode="hard" expects raw cosines and keeps entries >= alpha. The
    diagonal is always kept so every row retains at least itself and the
    softmax stays well defined.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ShapeError(f"mask needs a square score matrix, got shape {scores.shape}")
    if mode == "adaptive":
        keep = scores >= 0.0
    elif mode == "hard":
        keep = scores >= alpha
    else:
        raise ConfigError("mask_mode", f"build_mask supports adaptive or hard, got {mode!r}")
    mask = np.where(keep, 0.0, -np.inf)
    np.fill_diagonal(mask, 0.0)
    return mask


def _source_features(window, source):
    if source == "proxy":
        return window.x_vfm, window.x_grid
    arr = window.q_clip if source == "qq" else window.k_clip
    if arr is None:
        raise ProxysegError(f"attn_source {source!r} needs {'q' if source == 'qq' else 'k'} arrays in the bundle")
    n, seq, d_head = arr.shape
    # fuse heads feature-wise into one (L, n*d_head) matrix, then treat it
    # exactly like the proxy source
    fused = np.ascontiguousarray(np.transpose(arr, (1, 0, 2)).reshape(seq, n * d_head))
    return fused, window.v_grid


def attention_scores(window, cfg):
    """Attention for one window under cfg; see AttentionResult for layout."""
    if cfg.attn_source in ("proxy", "qq", "kk"):
        feats, grid = _source_features(window, cfg.attn_source)
        s = similarity(feats)
        if cfg.mask_mode == "adaptive":
            a = normalize_similarity(s, cfg.beta, cfg.gamma)
            mask = build_mask(a, "adaptive")
            attn = softmax_masked(a, mask)
        elif cfg.mask_mode == "hard":
            # threshold on raw cosines and feed them unscaled to the softmax
            mask = build_mask(s, "hard", cfg.alpha)
            attn = softmax_masked(s, mask)
        else:
            mask = None
            attn = softmax_masked(normalize_similarity(s, cfg.beta, cfg.gamma))
        frac = 0.0 if mask is None else float(np.isneginf(mask).mean())
        return AttentionResult(attn=attn.astype(np.float32), grid=grid, mask_fraction=frac)

    # qk and vanilla: the standard per-head attention of the frozen encoder
    q, k = window.q_clip, window.k_clip
    if q is None or k is None:
        raise ProxysegError(f"attn_source {cfg.attn_source!r} needs both q and k arrays in the bundle")
    n, seq, d_head = q.shape
    scale = 1.0 / math.sqrt(d_head) if cfg.scale_qk else 1.0
    heads = np.empty((n, seq, seq), dtype=np.float32)
    for h in range(n):
        logits = matmul(np.asarray(q[h], np.float64), np.ascontiguousarray(np.asarray(k[h], np.float64).T))
        heads[h] = softmax_masked(logits * scale).astype(np.float32)
    return AttentionResult(attn=heads, grid=window.v_grid, mask_fraction=0.0)


def correspondence_scores(window, source, scale_qk=True):
    """Raw pre-softmax pairwise scores for the coherence analysis.

    proxy/qq/kk give the cosine-similarity matrix of the source features;
    qk/vanilla give the head-averaged scaled dot-product logits. Returns
    (scores, grid). Monotone transforms downstream (shift, scale, gamma)
    do not change rank metrics, so the raw matrix is the canonical one.
    """
    if source in ("proxy", "qq", "kk"):
        feats, grid = _source_features(window, source)
        return similarity(feats), grid
    if source not in ("qk", "vanilla"):
        raise ConfigError("attn_source", f"must be one of {ATTN_SOURCES}, got {source!r}")
    q, k = window.q_clip, window.k_clip
    if q is None or k is None:
        raise ProxysegError(f"attn_source {source!r} needs both q and k arrays in the bundle")
    n, seq, d_head = q.shape
    scale = 1.0 / math.sqrt(d_head) if scale_qk else 1.0
    acc = np.zeros((seq, seq), dtype=np.float64)
    for h in range(n):
        acc += matmul(np.asarray(q[h], np.float64), np.ascontiguousarray(np.asarray(k[h], np.float64).T))
    return acc * (scale / n), window.v_grid


def apply_attention(attn, v, v_grid, weights, target_grid):
    """Attend over per-head values, fuse heads, and project to the joint space.

    Steps: resize each head's value grid to target_grid when they differ,
    multiply by the attention (shared 2-d or per-head 3-d), concatenate
    heads, out-projection affine, layer norm, joint-space projection,
    l2-normalize rows. No residual branch and no feed-forward block.
    """
    v = np.asarray(v)
    if v.ndim != 3:
        raise ShapeError(f"expected values shaped (n_heads, L, d_head), got {v.shape}")
    n, seq, d_v = v.shape
    hv, wv = v_grid
    if hv * wv != seq:
        raise ShapeError(f"value grid {hv}x{wv} does not match sequence length {seq}")
    ht, wt = target_grid
    target_len = ht * wt

    attn = np.asarray(attn)
    if attn.ndim == 2:
        per_head = [attn] * n
    elif attn.ndim == 3:
        if attn.shape[0] != n:
            raise ShapeError(f"attention has {attn.shape[0]} heads, values have {n}")
        per_head = [attn[h] for h in range(n)]
    else:
        raise ShapeError(f"attention must be 2-d or 3-d, got shape {attn.shape}")
    for a in per_head:
        if a.shape != (target_len, target_len):
            raise ShapeError(f"attention shape {a.shape} does not match target grid {ht}x{wt}")

    d = n * d_v
    if weights.out_proj_weight.shape != (d, d):
        raise ShapeError(
            f"out projection is {weights.out_proj_weight.shape}, heads concatenate to {d} features"
        )

    fused = np.empty((target_len, d), dtype=np.float32)
    for h in range(n):
        head = np.ascontiguousarray(v[h], dtype=np.float32)
        if (hv, wv) != (ht, wt):
            head = bilinear_resize_grid(head.reshape(hv, wv, d_v), ht, wt).reshape(target_len, d_v)
        fused[:, h * d_v : (h + 1) * d_v] = matmul(np.ascontiguousarray(per_head[h], np.float32), head)

    out = matmul(fused, weights.out_proj_weight) + weights.out_proj_bias
    out = layer_norm(out, weights.ln_post_weight, weights.ln_post_bias, weights.ln_eps)
    out = matmul(out, weights.visual_proj)
    return l2_normalize_rows(out)
