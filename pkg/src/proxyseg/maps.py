"""Label-map files: 16-bit binary PGM for exact indices, palette PNG for eyes.

PGM is the canonical interchange format for label maps (including ground
truth): P5, maxval 65535, big-endian samples. The PNG writer is a viewing
aid only and needs a palette file, a JSON array of [r, g, b] per class.
"""

import json

import numpy as np

from .errors import MapFormatError

PGM_MAXVAL = 65535


def write_label_map(path, labels):
    """Write class indices as binary PGM (P5, maxval 65535, big-endian)."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise MapFormatError(f"label map must be 2-d, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() > PGM_MAXVAL):
        raise MapFormatError(
            f"labels out of range [0, {PGM_MAXVAL}]: min {labels.min()}, max {labels.max()}"
        )
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (w, h, PGM_MAXVAL))
        f.write(labels.astype(">u2").tobytes(order="C"))


def _pgm_tokens(data, count):
    # header tokens separated by whitespace; # starts a comment to end of line
    tokens, pos = [], 2
    while len(tokens) < count:
        if pos >= len(data):
            raise MapFormatError("PGM header ended early")
        c = data[pos : pos + 1]
        if c == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl == -1 else nl + 1
        elif c.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace() and data[end : end + 1] != b"#":
                end += 1
            tokens.append(data[pos:end])
            pos = end
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise MapFormatError("PGM header not terminated by whitespace")
    return tokens, pos + 1


def read_label_map(path):
    """Read a binary PGM label map back as int32, shape (H, W)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] != b"P5":
        raise MapFormatError(f"{path}: not a binary PGM (expected P5)")
    tokens, start = _pgm_tokens(data, 3)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MapFormatError(f"{path}: non-numeric PGM header fields {tokens}") from None
    if w < 1 or h < 1 or not 0 < maxval <= PGM_MAXVAL:
        raise MapFormatError(f"{path}: bad PGM dimensions {w}x{h} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = h * w * dtype.itemsize
    payload = data[start : start + need]
    if len(payload) != need:
        raise MapFormatError(f"{path}: pixel data shorter than {h}x{w} requires")
    return np.frombuffer(payload, dtype=dtype).reshape(h, w).astype(np.int32)


def load_palette(path):
    """Load a JSON array of [r, g, b] rows as a (K, 3) uint8 array."""
    with open(path, "r", encoding="utf-8") as f:
        rows = json.load(f)
    if not isinstance(rows, list) or not rows:
        raise MapFormatError(f"{path}: palette must be a non-empty JSON array")
    for i, row in enumerate(rows):
        if not (isinstance(row, list) and len(row) == 3):
            raise MapFormatError(f"{path}: palette entry {i} is not an [r, g, b] triple")
        if not all(isinstance(v, int) and 0 <= v <= 255 for v in row):
            raise MapFormatError(f"{path}: palette entry {i} has values outside [0, 255]")
    return np.asarray(rows, dtype=np.uint8)


def write_color_map(path, labels, palette):
    """Render a label map as a palette-colored PNG (viewing aid)."""
    from PIL import Image

    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise MapFormatError(f"label map must be 2-d, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= len(palette)):
        raise MapFormatError(
            f"labels reach {labels.max()} but palette has only {len(palette)} colors"
        )
    rgb = palette[labels]
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
