"""Pixel-exact precision/recall/F1, ODS and fixed-threshold vessel metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .raster import as_mask, check_same_shape


def default_grid(step: float = 0.01) -> np.ndarray:
    n = int(round(1.0 / step))
    return np.round(np.arange(1, n) * step, 10)


@dataclass(frozen=True)
class PRPoint:
    t: float
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    ods: float
    best_t: float
    per_image_f1_at_best_t: list[float]
    threshold_grid: list[float]
    N: int
    mean_f1_curve: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ods": self.ods,
            "best_t": self.best_t,
            "N": self.N,
            "per_image_f1_at_best_t": list(self.per_image_f1_at_best_t),
            "threshold_grid": list(self.threshold_grid),
            "mean_f1_curve": list(self.mean_f1_curve),
        }


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _counts(prob, gt, t):
    prob = np.asarray(prob, dtype=np.float64)
    gt = as_mask(gt).astype(bool)
    check_same_shape(prob, gt)
    pred = prob > t
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(pred.size - tp - fp - fn)
    return tp, fp, fn, tn


def _pr(tp, fp, fn):
    p = 1.0 if tp + fp == 0 else tp / (tp + fp)
    r = 1.0 if tp + fn == 0 else tp / (tp + fn)
    return p, r


def pr_at_threshold(prob, gt, t: float) -> PRPoint:
    """Counts use ``prob > t``; no predictions means P=1, empty gt means R=1."""
    tp, fp, fn, _ = _counts(prob, gt, t)
    p, r = _pr(tp, fp, fn)
    return PRPoint(float(t), p, r, _f1(p, r))


def _f1_table(probs, gts, grid) -> np.ndarray:
    """(N, len(grid)) per-image F1, via cumulative histograms per image."""
    grid = np.asarray(grid, dtype=np.float64)
    table = np.empty((len(probs), len(grid)))
    for i, (prob, gt) in enumerate(zip(probs, gts)):
        prob = np.asarray(prob, dtype=np.float64)
        g = as_mask(gt).astype(bool)
        check_same_shape(prob, g)
        pos = np.sort(prob[g])
        neg = np.sort(prob[~g])
        # number of values strictly greater than t
        tp = len(pos) - np.searchsorted(pos, grid, side="right")
        fp = len(neg) - np.searchsorted(neg, grid, side="right")
        fn = len(pos) - tp
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(tp + fp == 0, 1.0, tp / np.maximum(tp + fp, 1))
            r = np.where(tp + fn == 0, 1.0, tp / np.maximum(tp + fn, 1))
            f = np.where(p + r == 0, 0.0, 2 * p * r / np.where(p + r == 0, 1.0, p + r))
        table[i] = f
    return table


def ods(probs, gts, grid=None) -> EvalReport:
    """Best mean per-image F1 over one threshold shared by the whole dataset."""
    if len(probs) == 0:
        raise ValueError("empty dataset")
    if len(probs) != len(gts):
        raise ValueError("probability maps and ground truths differ in count")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if len(grid) == 0 or grid.min() <= 0 or grid.max() >= 1:
        raise ValueError("threshold grid must be a non-empty subset of (0, 1)")
    table = _f1_table(probs, gts, grid)
    curve = table.mean(axis=0)
    k = int(np.argmax(curve))
    return EvalReport(
        ods=float(curve[k]),
        best_t=float(grid[k]),
        per_image_f1_at_best_t=[float(v) for v in table[:, k]],
        threshold_grid=[float(v) for v in grid],
        N=len(probs),
        mean_f1_curve=[float(v) for v in curve],
    )


def exact_thresholds(probs) -> np.ndarray:
    """One representative threshold per distinct binarization in (0, 1).

    ``prob > t`` only changes when ``t`` crosses a value present in the data,
    so the midpoints between consecutive distinct values (with 0 and 1 as
    outer fences) cover every achievable prediction.
    """
    vals = np.unique(np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in probs]))
    fences = np.unique(np.concatenate([[0.0, 1.0], vals[(vals > 0) & (vals < 1)]]))
    return 0.5 * (fences[:-1] + fences[1:])


def ods_exact(probs, gts) -> EvalReport:
    return ods(probs, gts, exact_thresholds(probs))


def sens_spec(prob, gt, t: float = 0.5) -> tuple[float, float, float]:
    """Sensitivity, specificity and F1 at a single fixed threshold."""
    tp, fp, fn, tn = _counts(prob, gt, t)
    sens = 1.0 if tp + fn == 0 else tp / (tp + fn)
    spec = 1.0 if tn + fp == 0 else tn / (tn + fp)
    p, r = _pr(tp, fp, fn)
    return sens, spec, _f1(p, r)


def iou(a, b) -> float:
    a, b = as_mask(a).astype(bool), as_mask(b).astype(bool)
    check_same_shape(a, b)
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union


def mask_precision_recall(pred, gt) -> tuple[float, float]:
    """Precision and recall of a binary mask against ground truth."""
    tp, fp, fn, _ = _counts(as_mask(pred).astype(np.float64), gt, 0.5)
    return _pr(tp, fp, fn)
