"""Evaluation: mIoU over label maps and pairwise-coherence PR analysis.

The coherence analysis treats a patch-to-patch score matrix as a binary
classifier for "these two patches share a ground-truth label" and reports
the average precision of an exhaustive threshold sweep. Pairs are ordered,
self-pairs are skipped, and patches whose majority label is the ignore
class drop out entirely.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ProxysegError, ShapeError

IGNORE = -1


@dataclass
class ConfusionMatrix:
    """Pixel counts with rows = ground truth, cols = prediction."""

    counts: np.ndarray  # (C, C) int64
    ignore_index: int

    @classmethod
    def empty(cls, classes, ignore_index=255):
        return cls(counts=np.zeros((classes, classes), dtype=np.int64), ignore_index=ignore_index)

    @property
    def classes(self):
        return self.counts.shape[0]


def _labels_of(x):
    return np.asarray(getattr(x, "labels", x))


def accumulate(cm, pred, gt):
    """Add one image's pixels into the accumulator; ignore pixels skipped."""
    pred = _labels_of(pred)
    gt = _labels_of(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    c = cm.classes
    keep = gt != cm.ignore_index
    g = gt[keep].astype(np.int64)
    p = pred[keep].astype(np.int64)
    if g.size:
        if g.min() < 0 or g.max() >= c:
            raise ProxysegError(
                f"ground-truth label outside [0, {c}) and not ignore_index {cm.ignore_index}"
            )
        if p.min() < 0 or p.max() >= c:
            raise ProxysegError(f"predicted label outside [0, {c})")
        cm.counts += np.bincount(g * c + p, minlength=c * c).reshape(c, c)
    return cm


def merge(a, b):
    """Combine two accumulators; order never matters."""
    if a.counts.shape != b.counts.shape:
        raise ShapeError(f"cannot merge {a.counts.shape} with {b.counts.shape}")
    if a.ignore_index != b.ignore_index:
        raise ProxysegError(f"ignore_index mismatch: {a.ignore_index} vs {b.ignore_index}")
    return ConfusionMatrix(counts=a.counts + b.counts, ignore_index=a.ignore_index)


def miou(cm):
    """Per-class IoU (None where the union is empty) and their mean."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    union = counts.sum(axis=0) + counts.sum(axis=1) - tp
    per_class = [float(tp[c] / union[c]) if union[c] > 0 else None for c in range(cm.classes)]
    defined = [v for v in per_class if v is not None]
    if not defined:
        raise ProxysegError("every class has zero union; mIoU is undefined")
    return per_class, float(sum(defined) / len(defined))


@dataclass(frozen=True)
class PatchLabels:
    """Majority label per patch cell; IGNORE marks dropped cells."""

    labels: np.ndarray  # (H_p, W_p) int32


def patch_majority(gt, patch, ignore_index=255):
    """Modal label per non-overlapping patch cell, ties to the lowest label.

    Border cells may be ragged and use whatever pixels they have. A cell
    becomes IGNORE when the modal label is the ignore class.
    """
    gt = _labels_of(gt)
    if gt.ndim != 2:
        raise ShapeError(f"ground truth must be 2-d, got shape {gt.shape}")
    if patch < 1:
        raise ShapeError(f"patch size must be >= 1, got {patch}")
    h, w = gt.shape
    hp = -(-h // patch)
    wp = -(-w // patch)
    out = np.empty((hp, wp), dtype=np.int32)
    for cy in range(hp):
        for cx in range(wp):
            block = gt[cy * patch : (cy + 1) * patch, cx * patch : (cx + 1) * patch]
            values, freq = np.unique(block, return_counts=True)
            modal = int(values[np.argmax(freq)])  # unique sorts, argmax takes first max
            out[cy, cx] = IGNORE if modal == ignore_index else modal
    return PatchLabels(labels=out)


@dataclass(frozen=True)
class PrCurve:
    """Threshold sweep points (descending threshold) and their average precision."""

    points: list  # of (threshold, precision, recall)
    ap: float


def _pairs(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    flat = _labels_of(labels).ravel()
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ShapeError(f"scores must be square, got shape {scores.shape}")
    if scores.shape[0] != flat.size:
        raise ShapeError(f"scores are {scores.shape[0]} patches but labels have {flat.size}")
    keep = np.nonzero(flat != IGNORE)[0]
    sub = scores[np.ix_(keep, keep)]
    y = flat[keep]
    off = ~np.eye(keep.size, dtype=bool)
    return sub[off], (y[:, None] == y[None, :])[off]


def coherence(scores, labels, thresholds="auto"):
    """PR curve of scores as a same-label classifier over ordered patch pairs.

    Predict "same label" when score >= threshold. Self-pairs and pairs with
    an IGNORE endpoint are excluded. AP sums precision times the recall
    gained at each step of the descending threshold sweep.
    """
    return coherence_pooled([(scores, labels)], thresholds)


_MAX_CURVE_POINTS = 4096


def coherence_pooled(instances, thresholds="auto"):
    """Coherence over the union of pairs from many (scores, labels) instances.

    Each instance contributes its own within-instance pairs; the threshold
    sweep then runs over the pooled set, the way a dataset-level PR curve
    pools every image. AP is exact over every threshold; the stored curve
    is subsampled beyond _MAX_CURVE_POINTS to keep CSVs plottable.
    """
    if not instances:
        raise ShapeError("no score/label instances given")
    all_scores, all_truth = [], []
    for scores, labels in instances:
        s, t = _pairs(scores, labels)
        all_scores.append(s)
        all_truth.append(t)
    pair_scores = np.concatenate(all_scores)
    pair_truth = np.concatenate(all_truth)

    positives = int(pair_truth.sum())
    if positives == 0:
        raise ProxysegError("no same-label pairs exist; average precision is undefined")

    order = np.argsort(pair_scores, kind="stable")
    asc_scores = pair_scores[order]
    total = asc_scores.size
    # suffix_pos[i] = positive pairs with score >= asc_scores[i]
    suffix_pos = np.zeros(total + 1, dtype=np.int64)
    suffix_pos[:total] = np.cumsum(pair_truth[order][::-1])[::-1]

    if isinstance(thresholds, str) and thresholds == "auto":
        uniq, first_at = np.unique(asc_scores, return_index=True)
        sweep = uniq[::-1]
        lo = first_at[::-1]
    else:
        sweep = np.sort(np.unique(np.asarray(list(thresholds), dtype=np.float64)))[::-1]
        lo = np.searchsorted(asc_scores, sweep, side="left")

    predicted = total - lo
    hits = suffix_pos[lo]
    precision = np.where(predicted > 0, hits / np.maximum(predicted, 1), 1.0)
    recall = hits / positives
    ap = float(np.sum((recall - np.concatenate(([0.0], recall[:-1]))) * precision))

    if sweep.size > _MAX_CURVE_POINTS:
        keep = np.unique(np.linspace(0, sweep.size - 1, _MAX_CURVE_POINTS).astype(np.int64))
    else:
        keep = np.arange(sweep.size)
    points = [(float(sweep[i]), float(precision[i]), float(recall[i])) for i in keep]
    return PrCurve(points=points, ap=ap)


def write_iou_csv(path, class_names, per_class):
    """Per-class IoU table: class_name, iou (empty when undefined)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["class_name", "iou"])
        for name, value in zip(class_names, per_class):
            writer.writerow([name, "" if value is None else f"{value:.6f}"])


def write_pr_csv(path, curve):
    """PR sweep table: threshold, precision, recall, one row per point."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold", "precision", "recall"])
        for t, p, r in curve.points:
            writer.writerow([f"{t:.9g}", f"{p:.6f}", f"{r:.6f}"])
