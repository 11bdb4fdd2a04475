"""Mask quality measures: MAE, adaptive F-beta, IoU and Dice."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

BETA2 = 0.3

# reported as unavailable: defined only in external work
UNAVAILABLE = ("S_alpha", "E_phi", "AUC", "SEN")


@dataclass(frozen=True)
class MetricReport:
    mae: float
    f_beta: float
    iou: float
    dice: float
    threshold_used: float


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidArgumentError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def mae(pred, gt):
    pred, gt = _pair(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


def adaptive_threshold(pred):
    return min(2.0 * float(np.mean(pred)), 1.0)


def f_beta_adaptive(pred, gt, beta2=BETA2):
    """F-measure after binarising ``pred`` at ``min(2 * mean(pred), 1)``.

    An all-zero prediction binarises to the empty mask.  Empty prediction vs
    empty ground truth scores 1; no true positives otherwise scores 0.
    """
    pred, gt = _pair(pred, gt)
    t = adaptive_threshold(pred)
    binary = (pred >= t) & (pred > 0)
    truth = gt > 0.5
    tp = float(np.sum(binary & truth))
    n_pred, n_true = float(binary.sum()), float(truth.sum())
    if n_pred == 0 and n_true == 0:
        return 1.0
    if tp == 0:
        return 0.0
    precision, recall = tp / n_pred, tp / n_true
    return (1 + beta2) * precision * recall / (beta2 * precision + recall)


def _binary(x):
    return np.asarray(x, dtype=np.float64) > 0.5


def iou(pred, gt):
    """|A & B| / |A | B| on binary masks; two empty masks score 1."""
    pred, gt = _pair(pred, gt)
    a, b = _binary(pred), _binary(gt)
    union = np.sum(a | b)
    return 1.0 if union == 0 else float(np.sum(a & b)) / float(union)


def dice(pred, gt):
    pred, gt = _pair(pred, gt)
    a, b = _binary(pred), _binary(gt)
    total = float(a.sum() + b.sum())
    return 1.0 if total == 0 else 2.0 * float(np.sum(a & b)) / total


def evaluate(pred, gt, threshold=0.5) -> MetricReport:
    """Full report for a soft prediction; IoU/Dice binarise at ``threshold``."""
    pred, gt = _pair(pred, gt)
    hard = (pred >= threshold).astype(np.float64)
    return MetricReport(
        mae=mae(pred, gt),
        f_beta=f_beta_adaptive(pred, gt),
        iou=iou(hard, gt),
        dice=dice(hard, gt),
        threshold_used=adaptive_threshold(pred),
    )
