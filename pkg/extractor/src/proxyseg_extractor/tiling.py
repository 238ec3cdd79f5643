"""Sliding-window rule shared with the engine's manifest validator.

The engine rejects bundles whose window rectangles differ from this
enumeration, so the rule is part of the file-format contract: offsets run
0, step, 2*step, ... with step = min(stride, window) so coverage never
gaps, plus a final offset clamped to the far edge when it does not land
exactly, deduplicated. Rows vary slowest.
"""

from .errors import ExtractorError


def _offsets(dim, window, step):
    xs = list(range(0, dim - window + 1, step))
    if xs[-1] != dim - window:
        xs.append(dim - window)
    return xs


def window_rects(h, w, window, stride):
    """Rectangles (x0, y0, w, h) tiling an h-by-w image."""
    if window < 1 or stride < 1:
        raise ExtractorError(f"window {window} and stride {stride} must be >= 1")
    if window > h or window > w:
        raise ExtractorError(f"window {window} exceeds image {h}x{w}")
    step = min(stride, window)
    return [
        (x0, y0, window, window)
        for y0 in _offsets(h, window, step)
        for x0 in _offsets(w, window, step)
    ]
