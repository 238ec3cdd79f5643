"""On-disk bundle format: array files, manifests, weights, text embeddings.

A bundle is a JSON manifest tying together one .npy file per array. The
format decouples the engine from any deep-learning runtime: extraction
happens elsewhere, this module only reads, writes and validates. Array
files are NPY v1.0, little-endian, C-order, float32 or int32; anything
else is rejected with a distinct error reason.
"""

import ast
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BundleValidationError, NpyFormatError

_MAGIC = b"\x93NUMPY"
_DESCR_TO_DTYPE = {"<f4": np.dtype("<f4"), "<i4": np.dtype("<i4")}


def write_array(path, arr):
    """Write a float32/int32 array as NPY v1.0, C-order, little-endian."""
    arr = np.asarray(arr)
    if arr.ndim == 0:
        raise NpyFormatError("rank", "0-d arrays are not supported")
    arr = np.ascontiguousarray(arr)
    descr = None
    for cand, dt in _DESCR_TO_DTYPE.items():
        if arr.dtype == dt:
            descr = cand
    if descr is None:
        raise NpyFormatError("dtype", f"unsupported dtype {arr.dtype}, expected float32 or int32")
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (descr, str(arr.shape))
    # pad so magic+version+len+header is a multiple of 64, newline-terminated
    unpadded = len(_MAGIC) + 2 + 2 + len(header) + 1
    header = header + " " * (-unpadded % 64) + "\n"
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(b"\x01\x00")
        f.write(struct.pack("<H", len(header)))
        f.write(header.encode("latin1"))
        f.write(arr.tobytes(order="C"))


def read_array(path):
    """Read an NPY v1.0 file written by write_array or numpy itself."""
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(_MAGIC)] != _MAGIC:
        raise NpyFormatError("magic", f"{path}: not an NPY file (magic mismatch)")
    if data[6:8] != b"\x01\x00":
        raise NpyFormatError("version", f"{path}: unsupported NPY version {data[6]}.{data[7]}")
    if len(data) < 10:
        raise NpyFormatError("truncated", f"{path}: header length missing")
    (hlen,) = struct.unpack("<H", data[8:10])
    header_end = 10 + hlen
    if len(data) < header_end:
        raise NpyFormatError("truncated", f"{path}: header shorter than declared")
    try:
        meta = ast.literal_eval(data[10:header_end].decode("latin1"))
        descr, fortran, shape = meta["descr"], meta["fortran_order"], meta["shape"]
    except (ValueError, SyntaxError, KeyError, TypeError):
        raise NpyFormatError("header", f"{path}: malformed header dict") from None
    if fortran:
        raise NpyFormatError("fortran_order", f"{path}: Fortran-order arrays are not supported")
    if descr not in _DESCR_TO_DTYPE:
        raise NpyFormatError("dtype", f"{path}: unsupported descr {descr!r}")
    if not isinstance(shape, tuple) or len(shape) == 0:
        raise NpyFormatError("rank", f"{path}: unsupported shape {shape!r}")
    if not all(isinstance(s, int) and s >= 0 for s in shape):
        raise NpyFormatError("header", f"{path}: bad shape {shape!r}")
    dtype = _DESCR_TO_DTYPE[descr]
    count = int(np.prod(shape, dtype=np.int64))
    payload = data[header_end : header_end + count * dtype.itemsize]
    if len(payload) != count * dtype.itemsize:
        raise NpyFormatError("truncated", f"{path}: payload shorter than shape requires")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


@dataclass(frozen=True)
class WindowFeatures:
    """Pre-extracted features for one sliding window of an image."""

    rect: tuple  # (x0, y0, w, h) in resized-image pixels, inclusive-exclusive
    x_vfm: np.ndarray  # (hx*wx, dx) foundation-model patch features
    x_grid: tuple  # (hx, wx)
    v_clip: np.ndarray  # (n_heads, hv*wv, dv) CLIP value embeddings per head
    v_grid: tuple  # (hv, wv)
    q_clip: np.ndarray | None = None  # (n_heads, hv*wv, d_head), ablations only
    k_clip: np.ndarray | None = None


@dataclass(frozen=True)
class ClipHeadWeights:
    """Projection stack applied after attention: fuse heads, norm, project.

    out_proj_weight and visual_proj are stored so they apply as x @ W + b.
    """

    out_proj_weight: np.ndarray  # (d, d)
    out_proj_bias: np.ndarray  # (d,)
    ln_post_weight: np.ndarray  # (d,)
    ln_post_bias: np.ndarray  # (d,)
    ln_eps: float
    visual_proj: np.ndarray  # (d, d_joint)


@dataclass(frozen=True)
class TextEmbeddings:
    """Unit-norm class prompt embeddings in the joint space."""

    embeddings: np.ndarray  # (C, d_joint)
    class_names: list


@dataclass(frozen=True)
class FeatureBundle:
    image_id: str
    resized_size: tuple  # (H, W) pixels
    window: int
    stride: int
    clip_model: str
    vfm_model: str
    clip_patch: int
    vfm_patch: int
    d: int
    d_joint: int
    n_heads: int
    weights_path: str
    windows: list


_BUNDLE_KEYS = (
    "schema_version",
    "image_id",
    "resized_h",
    "resized_w",
    "window",
    "stride",
    "clip_model",
    "vfm_model",
    "clip_patch",
    "vfm_patch",
    "d",
    "d_joint",
    "n_heads",
    "weights_path",
    "windows",
)
_WINDOW_KEYS = ("x0", "y0", "w", "h", "x_path", "hx", "wx", "dx", "v_path", "hv", "wv", "dv")


def _require(mapping, key, field):
    if key not in mapping:
        raise BundleValidationError(field, "missing required key")
    return mapping[key]


def _load_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _float_array(path, field, shape=None):
    arr = read_array(path)
    if arr.dtype != np.float32:
        raise BundleValidationError(field, f"expected float32 array, got {arr.dtype}")
    if shape is not None and arr.shape != shape:
        raise BundleValidationError(field, f"array shape {arr.shape} does not match expected {shape}")
    return arr


def load_bundle(manifest_path):
    """Load and fully validate a feature bundle manifest."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    m = _load_json(manifest_path)

    for key in _BUNDLE_KEYS:
        _require(m, key, key)
    if m["schema_version"] != 1:
        raise BundleValidationError("schema_version", f"expected 1, got {m['schema_version']}")
    h, w = int(m["resized_h"]), int(m["resized_w"])
    window, stride = int(m["window"]), int(m["stride"])
    d, n_heads = int(m["d"]), int(m["n_heads"])

    if not m["windows"]:
        raise BundleValidationError("windows", "bundle has no windows")

    windows = []
    for i, wm in enumerate(m["windows"]):
        prefix = f"windows[{i}]"
        for key in _WINDOW_KEYS:
            _require(wm, key, f"{prefix}.{key}")
        rect = (int(wm["x0"]), int(wm["y0"]), int(wm["w"]), int(wm["h"]))
        if rect[2] != window or rect[3] != window:
            raise BundleValidationError(f"{prefix}.w", f"window rect size {rect[2]}x{rect[3]} != window {window}")
        if rect[0] < 0 or rect[1] < 0 or rect[0] + rect[2] > w or rect[1] + rect[3] > h:
            raise BundleValidationError(f"{prefix}.x0", f"rect {rect} outside resized image {h}x{w}")
        hx, wx, dx = int(wm["hx"]), int(wm["wx"]), int(wm["dx"])
        hv, wv, dv = int(wm["hv"]), int(wm["wv"]), int(wm["dv"])
        if n_heads * dv != d:
            raise BundleValidationError(f"{prefix}.dv", f"n_heads*dv = {n_heads * dv} != d = {d}")
        x_vfm = _float_array(base / wm["x_path"], f"{prefix}.x_path", (hx * wx, dx))
        v_clip = _float_array(base / wm["v_path"], f"{prefix}.v_path", (n_heads, hv * wv, dv))
        q_clip = k_clip = None
        if wm.get("q_path"):
            q_clip = _float_array(base / wm["q_path"], f"{prefix}.q_path")
            _check_head_seq(q_clip, n_heads, hv * wv, f"{prefix}.q_path")
        if wm.get("k_path"):
            k_clip = _float_array(base / wm["k_path"], f"{prefix}.k_path")
            _check_head_seq(k_clip, n_heads, hv * wv, f"{prefix}.k_path")
        if q_clip is not None and k_clip is not None and q_clip.shape != k_clip.shape:
            raise BundleValidationError(f"{prefix}.k_path", f"q shape {q_clip.shape} != k shape {k_clip.shape}")
        windows.append(
            WindowFeatures(
                rect=rect,
                x_vfm=x_vfm,
                x_grid=(hx, wx),
                v_clip=v_clip,
                v_grid=(hv, wv),
                q_clip=q_clip,
                k_clip=k_clip,
            )
        )

    from .segmenter import tile_windows

    expected = {(r.x0, r.y0, r.w, r.h) for r in tile_windows(h, w, window, stride)}
    actual = {win.rect for win in windows}
    if actual != expected:
        raise BundleValidationError(
            "windows",
            f"window rects {sorted(actual)} do not match the tiling rule {sorted(expected)}; "
            "full pixel coverage is not guaranteed",
        )

    return FeatureBundle(
        image_id=str(m["image_id"]),
        resized_size=(h, w),
        window=window,
        stride=stride,
        clip_model=str(m["clip_model"]),
        vfm_model=str(m["vfm_model"]),
        clip_patch=int(m["clip_patch"]),
        vfm_patch=int(m["vfm_patch"]),
        d=d,
        d_joint=int(m["d_joint"]),
        n_heads=n_heads,
        weights_path=str((base / m["weights_path"]).resolve()),
        windows=windows,
    )


def _check_head_seq(arr, n_heads, seq_len, field):
    if arr.ndim != 3 or arr.shape[0] != n_heads or arr.shape[1] != seq_len:
        raise BundleValidationError(
            field, f"array shape {arr.shape} does not match (n_heads={n_heads}, seq={seq_len}, *)"
        )


def load_weights(path):
    """Load the projection-stack weights manifest."""
    path = Path(path)
    base = path.parent
    m = _load_json(path)
    for key in ("schema_version", "d", "d_joint", "ln_eps", "out_proj_weight", "out_proj_bias",
                "ln_post_weight", "ln_post_bias", "visual_proj"):
        _require(m, key, key)
    if m["schema_version"] != 1:
        raise BundleValidationError("schema_version", f"expected 1, got {m['schema_version']}")
    d, d_joint = int(m["d"]), int(m["d_joint"])
    return ClipHeadWeights(
        out_proj_weight=_float_array(base / m["out_proj_weight"], "out_proj_weight", (d, d)),
        out_proj_bias=_float_array(base / m["out_proj_bias"], "out_proj_bias", (d,)),
        ln_post_weight=_float_array(base / m["ln_post_weight"], "ln_post_weight", (d,)),
        ln_post_bias=_float_array(base / m["ln_post_bias"], "ln_post_bias", (d,)),
        ln_eps=float(m["ln_eps"]),
        visual_proj=_float_array(base / m["visual_proj"], "visual_proj", (d, d_joint)),
    )


def load_text(path):
    """Load class names plus their unit-norm joint-space embeddings."""
    path = Path(path)
    base = path.parent
    m = _load_json(path)
    for key in ("schema_version", "class_names", "embeddings_path"):
        _require(m, key, key)
    if m["schema_version"] != 1:
        raise BundleValidationError("schema_version", f"expected 1, got {m['schema_version']}")
    names = [str(n) for n in m["class_names"]]
    if len(names) == 0:
        raise BundleValidationError("class_names", "empty vocabulary (0 classes)")
    emb = _float_array(base / m["embeddings_path"], "embeddings_path")
    if emb.ndim != 2 or emb.shape[0] != len(names):
        raise BundleValidationError(
            "embeddings_path", f"embeddings shape {emb.shape} does not match {len(names)} class names"
        )
    norms = np.linalg.norm(emb.astype(np.float64), axis=1)
    off = np.nonzero(np.abs(norms - 1.0) > 1e-4)[0]
    if off.size:
        raise BundleValidationError(
            "embeddings_path", f"row {off[0]} is not unit-norm (|row| = {norms[off[0]]:.6f})"
        )
    return TextEmbeddings(embeddings=emb, class_names=names)
