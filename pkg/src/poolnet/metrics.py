"""Saliency evaluation: weighted F-measure, mean absolute error, PR curves.

Conventions: predictions are binarized at each of 256 thresholds k/255 with
``s >= t``; ground truth is binarized at 0.5; precision and recall are
computed per image and then averaged.  An empty prediction against non-empty
ground truth counts as precision 1 (no false positives).  Images whose
ground truth has no positives are excluded from recall averaging and counted
in ``PRCurve.empty_gt_count``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError

BETA2 = 0.3
N_THRESHOLDS = 256


def f_measure(precision: float, recall: float, beta2: float = BETA2) -> float:
    """(1 + beta2) * P * R / (beta2 * P + R); zero when the denominator is zero."""
    if not 0.0 <= precision <= 1.0 or not 0.0 <= recall <= 1.0:
        raise ValueError(f"precision/recall must lie in [0, 1], got {precision}, {recall}")
    denom = beta2 * precision + recall
    if denom == 0.0:
        return 0.0
    return (1.0 + beta2) * precision * recall / denom


def _as_map(values, role: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{role} must be a 2-D map, got shape {arr.shape}")
    if arr.size == 0:
        raise ShapeError(f"{role} must not be empty")
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError(f"{role} values must lie in [0, 1]")
    return arr


def mae(saliency, ground_truth) -> float:
    """Mean absolute difference between two maps of equal size."""
    s = _as_map(saliency, "saliency map")
    g = _as_map(ground_truth, "ground truth")
    if s.shape != g.shape:
        raise ShapeError(f"map shapes differ: {s.shape} vs {g.shape}")
    return float(np.mean(np.abs(s - g)))


@dataclass
class PRCurve:
    """Averaged precision/recall at thresholds k/255 for k in 0..255."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    empty_gt_count: int


def pr_sweep(pairs) -> PRCurve:
    """Threshold sweep over (saliency, ground truth) map pairs."""
    if not pairs:
        raise ValueError("pr_sweep needs at least one (saliency, ground truth) pair")
    thresholds = np.arange(N_THRESHOLDS, dtype=np.float64) / 255.0
    precision_sum = np.zeros(N_THRESHOLDS)
    recall_sum = np.zeros(N_THRESHOLDS)
    recall_images = 0
    empty_gt = 0
    for saliency, ground_truth in pairs:
        s = _as_map(saliency, "saliency map")
        g = _as_map(ground_truth, "ground truth")
        if s.shape != g.shape:
            raise ShapeError(f"map shapes differ: {s.shape} vs {g.shape}")
        gt = (g >= 0.5).reshape(-1)
        flat = s.reshape(-1)
        predicted = flat[None, :] >= thresholds[:, None]
        predicted_count = predicted.sum(axis=1)
        true_positives = (predicted & gt[None, :]).sum(axis=1)
        precision_sum += np.where(predicted_count > 0,
                                  true_positives / np.maximum(predicted_count, 1), 1.0)
        gt_count = int(gt.sum())
        if gt_count == 0:
            empty_gt += 1
            continue
        recall_sum += true_positives / gt_count
        recall_images += 1
    n_images = len(pairs)
    recall = recall_sum / recall_images if recall_images else np.zeros(N_THRESHOLDS)
    return PRCurve(thresholds=thresholds,
                   precision=precision_sum / n_images,
                   recall=recall,
                   empty_gt_count=empty_gt)


def max_f(curve: PRCurve, beta2: float = BETA2) -> float:
    """Best F-measure over the 256 thresholds of a sweep."""
    if len(curve.precision) != N_THRESHOLDS or len(curve.recall) != N_THRESHOLDS:
        raise ShapeError(f"expected {N_THRESHOLDS} curve points, got "
                         f"{len(curve.precision)}/{len(curve.recall)}")
    return max(f_measure(p, r, beta2) for p, r in zip(curve.precision, curve.recall))


@dataclass
class MetricsRecord:
    """Headline numbers plus the full curve for one evaluated set."""

    max_f: float
    mae: float
    pr_curve: PRCurve


def evaluate_pairs(pairs) -> MetricsRecord:
    """MaxF, mean per-image MAE, and the PR curve for a list of map pairs."""
    curve = pr_sweep(pairs)
    errors = [mae(s, g) for s, g in pairs]
    return MetricsRecord(max_f=max_f(curve), mae=float(np.mean(errors)), pr_curve=curve)


def write_metrics_csv(record: MetricsRecord, path) -> None:
    """One summary row, then one row per threshold."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["max_f", "mae", "empty_gt_count"])
        writer.writerow([f"{record.max_f:.6f}", f"{record.mae:.6f}",
                         record.pr_curve.empty_gt_count])
        writer.writerow(["threshold", "precision", "recall"])
        for t, p, r in zip(record.pr_curve.thresholds, record.pr_curve.precision,
                           record.pr_curve.recall):
            writer.writerow([f"{t:.6f}", f"{p:.6f}", f"{r:.6f}"])
