"""Segmentation metrics, PSNR and sparsification curves."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError
from .scene_io import IGNORE, LabelImage

ORDERINGS = ("by-variance", "by-expectation", "by-heuristic", "oracle", "random")
PSNR_CAP = 99.0
DEFAULT_BINS = 20


@dataclass
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion(pred, gt, num_classes: int | None = None, mask=None) -> ConfusionMatrix:
    """Pixels whose ground truth or prediction is IGNORE, or whose mask is False, are left out."""
    if isinstance(gt, LabelImage):
        num_classes = num_classes or gt.num_classes
        gt = gt.category_ids
    if num_classes is None:
        raise ValueError("num_classes is required when gt is a plain array")
    pred = np.asarray(pred).astype(np.int64)
    gt = np.asarray(gt).astype(np.int64)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    keep = (gt != IGNORE) & (pred != IGNORE)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != gt.shape:
            raise DimensionError("mask shape does not match ground truth")
        keep &= mask
    g, p = gt[keep], pred[keep]
    if ((p < 0) | (p >= num_classes)).any() or ((g < 0) | (g >= num_classes)).any():
        raise DataError("category id out of range")
    counts = np.bincount(g * num_classes + p, minlength=num_classes**2)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def miou_accuracy(cm: ConfusionMatrix):
    """Per-class IoU (NaN where a class is absent from both sides), mIoU, accuracy."""
    counts = cm.counts.astype(np.float64)
    if counts.sum() == 0:
        raise DataError("confusion matrix is empty")
    tp = np.diag(counts)
    union = counts.sum(0) + counts.sum(1) - tp
    iou = np.full(len(tp), np.nan)
    present = union > 0
    iou[present] = tp[present] / union[present]
    return iou, float(iou[present].mean()), float(tp.sum() / counts.sum())


def psnr(rendered, reference) -> float:
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse <= 10 ** (-PSNR_CAP / 10):
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def metrics_report(cm: ConfusionMatrix, psnr_db: float | None = None) -> dict:
    """JSON-ready report; IoU, mIoU and accuracy are given in percent."""
    iou, miou, acc = miou_accuracy(cm)
    return {
        "per_class_iou": [None if np.isnan(v) else 100.0 * float(v) for v in iou],
        "miou": 100.0 * miou,
        "accuracy": 100.0 * acc,
        "psnr": psnr_db,
        "confusion": cm.counts.astype(int).tolist(),
    }


def write_report(path, report: dict):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)


# ---------------------------------------------------------------------------
# sparsification
# ---------------------------------------------------------------------------


@dataclass
class SparsificationCurve:
    fractions_removed: np.ndarray
    metric_values: np.ndarray
    ordering: str

    @property
    def area(self) -> float:
        """Mean metric over the bins; all bins are equally wide so this is the curve's area."""
        return float(np.mean(self.metric_values))


def _remaining_means(uncertainty, values, num_bins):
    """Mean of ``values`` after dropping the k most uncertain bins, k = 0..num_bins-1.

    Bins hold ``n // num_bins`` units (the last one takes the remainder).
    Units tied in uncertainty across a bin boundary are removed in equal
    proportion, which is the expectation over random tie-breaking.
    """
    u = np.asarray(uncertainty, dtype=np.float64).ravel()
    x = np.asarray(values, dtype=np.float64).ravel()
    if u.shape != x.shape:
        raise DimensionError("uncertainty and metric arrays differ in size")
    if num_bins < 1:
        raise DataError("num_bins must be >= 1")
    n = len(u)
    if n < num_bins:
        raise DataError(f"{n} units cannot fill {num_bins} bins")
    order = np.argsort(-u, kind="stable")
    key = -u[order]
    xs = x[order]
    csum = np.concatenate([[0.0], np.cumsum(xs)])
    size = n // num_bins
    out = []
    for k in range(num_bins):
        m = k * size
        if m == 0:
            out.append(csum[n] / n)
            continue
        lo = np.searchsorted(key, key[m], "left")
        hi = np.searchsorted(key, key[m], "right")
        if lo < m:
            kept = csum[n] - csum[hi] + (hi - m) / (hi - lo) * (csum[hi] - csum[lo])
        else:
            kept = csum[n] - csum[m]
        out.append(kept / (n - m))
    return np.arange(num_bins) / num_bins, np.array(out)


def _random_uncertainty(n, seed, repeat):
    rng = np.random.default_rng([seed, repeat])
    return rng.permutation(n).astype(np.float64)


def sparsify_pixels(uncertainty, errors, num_bins: int = DEFAULT_BINS, ordering: str = "by-variance",
                    valid=None, seed: int = 0, repeats: int = 1) -> SparsificationCurve:
    """Accuracy curve while removing pixels from most to least uncertain.

    ``errors`` is True where the prediction is wrong. ``ordering`` is a label
    except for ``"oracle"`` (sorts by true error) and ``"random"`` (averages
    ``repeats`` seeded permutations); ``uncertainty`` is ignored for both.
    """
    errors = np.asarray(errors, dtype=bool)
    if ordering not in ("oracle", "random"):
        uncertainty = np.asarray(uncertainty, dtype=np.float64)
        if uncertainty.shape != errors.shape:
            raise DimensionError("uncertainty and error maps differ in shape")
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        errors = errors[valid]
        if ordering not in ("oracle", "random"):
            uncertainty = uncertainty[valid]
    correct = (~errors).astype(np.float64).ravel()
    return _sparsify(uncertainty, correct, errors.astype(np.float64).ravel(), num_bins, ordering, seed, repeats)


def sparsify_images(uncertainties, psnrs, num_bins: int = DEFAULT_BINS, ordering: str = "by-variance",
                    seed: int = 0, repeats: int = 1) -> SparsificationCurve:
    """Mean-PSNR curve while removing whole images from most to least uncertain.

    The oracle removes the lowest-PSNR images first.
    """
    psnrs = np.asarray(psnrs, dtype=np.float64).ravel()
    return _sparsify(uncertainties, psnrs, -psnrs, num_bins, ordering, seed, repeats)


def _sparsify(uncertainty, values, true_badness, num_bins, ordering, seed, repeats):
    if ordering not in ORDERINGS:
        raise DataError(f"unknown ordering {ordering!r}; expected one of {ORDERINGS}")
    if ordering == "oracle":
        frac, curve = _remaining_means(true_badness, values, num_bins)
    elif ordering == "random":
        curves = [_remaining_means(_random_uncertainty(len(values), seed, r), values, num_bins)[1]
                  for r in range(repeats)]
        frac, curve = np.arange(num_bins) / num_bins, np.mean(curves, axis=0)
    else:
        frac, curve = _remaining_means(uncertainty, values, num_bins)
    return SparsificationCurve(frac, curve, ordering)


def write_curves_csv(path, curves):
    curves = list(curves)
    fr = curves[0].fractions_removed
    for c in curves[1:]:
        if not np.array_equal(c.fractions_removed, fr):
            raise DimensionError("curves use different bins")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["fraction_removed"] + [c.ordering for c in curves])
        for i, x in enumerate(fr):
            w.writerow([f"{x:.6f}"] + [f"{c.metric_values[i]:.10g}" for c in curves])


def read_curves_csv(path) -> list[SparsificationCurve]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], np.array(rows[1:], dtype=np.float64)
    return [SparsificationCurve(body[:, 0], body[:, i], name) for i, name in enumerate(header[1:], 1)]
