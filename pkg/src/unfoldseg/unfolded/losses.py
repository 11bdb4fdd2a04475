"""Deep-supervision loss: weighted BCE + weighted IoU on masks, dice on edges, MSE on reconstructions."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .. import tensor_core as tc
from ..errors import InvalidArgumentError

EPS_PROB = 1e-6
POOL_SIZE = 15
EDGE_WEIGHT_GAIN = 5.0
SMOOTH = 1.0
_AXES = (1, 2, 3)


def stage_weight(k, stages):
    """Weight of stage ``k`` (1-based) out of ``stages``: 1 / 2^(K - k)."""
    if not 1 <= k <= stages:
        raise InvalidArgumentError(f"stage {k} outside 1..{stages}")
    return 2.0 ** (k - stages)


def combine_stage_losses(stage_losses):
    """Weighted sum of per-stage losses; also returns each weighted contribution."""
    K = len(stage_losses)
    contributions = [tc.scale(loss, stage_weight(k, K)) for k, loss in enumerate(stage_losses, 1)]
    total = contributions[0]
    for part in contributions[1:]:
        total = total + part
    return total, contributions


def _batched(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None, None]
    if x.ndim == 3:
        return x[:, None]
    return x


def pixel_weights(gt):
    """1 + 5 * |meanpool_15x15(GT) - GT| (mirror boundary), batched (N, 1, H, W)."""
    gt = _batched(gt)
    pooled = ndimage.uniform_filter(gt, size=(1, 1, POOL_SIZE, POOL_SIZE), mode="mirror")
    return 1.0 + EDGE_WEIGHT_GAIN * np.abs(pooled - gt)


def edge_ground_truth(gt):
    """Binary 3x3 morphological gradient (dilation minus erosion) of a mask."""
    gt = np.asarray(gt, dtype=np.float64) > 0.5
    size = (1,) * (gt.ndim - 2) + (3, 3)
    dil = ndimage.maximum_filter(gt, size=size, mode="nearest")
    ero = ndimage.minimum_filter(gt, size=size, mode="nearest")
    return (dil & ~ero).astype(np.float64)


def weighted_terms_batched(m, gt, weights=None):
    """Batch-mean weighted BCE and weighted IoU loss for (N, 1, H, W) inputs (Var or array)."""
    gt = _batched(gt)
    w = pixel_weights(gt) if weights is None else weights
    p = tc.clamp(m, EPS_PROB, 1.0 - EPS_PROB)
    bce = -(gt * tc.log(p) + (1.0 - gt) * tc.log(1.0 - p))
    w_sum = np.sum(w, axis=_AXES)
    bce_w = tc.mean(tc.safe_div(tc.sum(w * bce, axis=_AXES), w_sum))
    inter = tc.sum(w * (p * gt), axis=_AXES)
    union = tc.sum(w * (p + gt - p * gt), axis=_AXES)
    iou_w = tc.mean(1.0 - tc.safe_div(inter + SMOOTH, union + SMOOTH))
    return bce_w, iou_w


def weighted_loss_terms(m, gt):
    """Weighted BCE and IoU loss for one (H, W) prediction against binary GT."""
    m, gt = np.asarray(m, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if m.shape != gt.shape:
        raise InvalidArgumentError(f"shape mismatch: {m.shape} vs {gt.shape}")
    bce_w, iou_w = weighted_terms_batched(_batched(m), gt)
    return float(bce_w), float(iou_w)


def dice_loss(e, gt_e):
    """Batch mean of 1 - (2 sum(E*G) + 1) / (sum E + sum G + 1)."""
    gt_e = _batched(gt_e)
    inter = tc.sum(e * gt_e, axis=_AXES)
    denom = tc.sum(e, axis=_AXES) + np.sum(gt_e, axis=_AXES)
    return tc.mean(1.0 - tc.safe_div(tc.scale(inter, 2.0) + SMOOTH, denom + SMOOTH))


def reconstruction_loss(c_hat, c):
    return tc.mean(tc.square(c_hat - c))
