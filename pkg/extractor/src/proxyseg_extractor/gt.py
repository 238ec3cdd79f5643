"""Ground-truth annotation conversion.

Annotations (paletted PNG or grayscale images of class indices) are
resized with nearest-neighbor to the exact resized-image geometry, so every
output pixel holds an original label value and the ignore index survives
untouched.
"""

import numpy as np
from PIL import Image

from .errors import ExtractorError
from .writer import write_label_map


def load_annotation(path):
    with Image.open(path) as img:
        if img.mode == "P":
            labels = np.asarray(img)  # palette indices are the class ids
        elif img.mode in ("L", "I", "I;16", "I;16B"):
            labels = np.asarray(img.convert("I"))
        else:
            raise ExtractorError(f"{path}: unsupported annotation mode {img.mode}")
    return labels.astype(np.int32)


def resize_nearest(labels, out_h, out_w):
    img = Image.fromarray(labels.astype(np.int32), mode="I")
    return np.asarray(img.resize((out_w, out_h), Image.NEAREST), dtype=np.int32)


def extract_gt(annotation_path, out_path, out_h, out_w):
    labels = resize_nearest(load_annotation(annotation_path), out_h, out_w)
    write_label_map(out_path, labels)
    return labels
