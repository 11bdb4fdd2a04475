"""Unfolded multistage network.

Each stage mirrors one solver iteration: the closed-form mask update with
learnable scalars, a dual-field refiner producing the mask and edge maps,
the closed-form background update, and a small U-shaped refiner producing
the refined background and a reconstruction of the input.

All tensors are batched ``(N, C, H, W)``.  Parameters may be plain arrays
(inference) or :class:`~unfoldseg.tensor_core.Var` handles (training); the
code is the same either way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import tensor_core as tc
from ..cos_model import attention_map, uncertainty_bands
from ..errors import InvalidArgumentError
from ..solver import StageState
from .features import feature_bank
from .losses import (
    combine_stage_losses,
    dice_loss,
    edge_ground_truth,
    pixel_weights,
    reconstruction_loss,
    weighted_terms_batched,
)
from .params import POSITIVE_SCALARS, ParamSet


@dataclass
class StageLoss:
    bce: object
    iou: object
    dice: object
    mse: object

    @property
    def total(self):
        return self.bce + self.iou + self.dice + self.mse


@dataclass
class ForwardResult:
    stages: list = field(default_factory=list)  # list[StageState], batched arrays
    loss: object = None
    stage_losses: list = field(default_factory=list)  # list[StageLoss], unweighted
    contributions: list = field(default_factory=list)  # weighted per-stage totals


def to_batch(images):
    """Stack (H, W, C) images or (H, W) masks into (N, C, H, W)."""
    arrs = [np.asarray(x, dtype=np.float64) for x in images]
    arrs = [a[..., None] if a.ndim == 2 else a for a in arrs]
    return np.stack([np.moveaxis(a, -1, 0) for a in arrs])


def _snap(m):
    """Uncertainty removal inside the graph.

    Snapped pixels become constants; pass-through pixels keep their gradient.
    """
    mv = tc.value(m)
    if np.any(mv < 0.0) or np.any(mv > 1.0):
        raise InvalidArgumentError("mask values must lie in [0, 1]")
    low, high = uncertainty_bands(mv)
    snapped = low | high
    target = np.where(low, 0.1, np.where(high, 0.9, 0.0))
    m_tilde = m * np.where(snapped, 0.0, 1.0) + target
    return m_tilde, attention_map(mv)


def _grad_s(r, slope, eps):
    if eps == 0:
        return slope * np.sign(tc.value(r))
    return slope * tc.safe_div(r, tc.sqrt(tc.square(r) + eps * eps))


def _conv(x, p, name):
    return tc.conv2d(x, p[name + ".w"]) + p[name + ".b"]


def _scalars(p):
    out = {name: tc.softplus(p[name]) for name in POSITIVE_SCALARS}
    out["grad_slope"] = p["grad_slope"]
    return out


def mask_update(c, b_prev, m_prev, m_prev2, p, eps_l1):
    """Closed-form mask estimate with stage-``k`` learnable scalars."""
    s = _scalars(p)
    alpha, mu, lip = s["alpha"], s["mu"], s["lipschitz"]
    m_tilde, w = _snap(m_prev)
    m_tilde_prev, w_prev = _snap(m_prev2)
    q_d = w_prev * m_tilde_prev
    r_prev = w_prev * m_prev - q_d
    c2 = np.sum(c * c, axis=1, keepdims=True)
    cb = tc.sum(c * b_prev, axis=1, keepdims=True)
    al = alpha * lip
    qa = c2 + al * w * w + mu
    qb = al * w * w_prev + mu
    qc = al * w * (w * m_tilde - q_d) - alpha * w * _grad_s(r_prev, s["grad_slope"], eps_l1)
    return tc.safe_div(qb * m_prev + c2 - cb + qc, qa)


def sofs_stage(c, b_prev, m_prev, m_prev2, features, p, eps_l1=1e-3, passthrough=False):
    """Foreground separation: returns ``(m_hat, m, e)``."""
    _check_batch(c, b_prev, m_prev, m_prev2)
    m_hat = mask_update(c, b_prev, m_prev, m_prev2, p, eps_l1)
    if passthrough:
        return m_hat, tc.clamp01(m_hat), np.zeros_like(tc.value(m_hat))
    ratio = tc.mean(tc.safe_div(b_prev, c), axis=1, keepdims=True)
    small = tc.tanh(_conv(features * m_hat + features, p, "sofs.small1"))
    small = tc.tanh(_conv(small, p, "sofs.small2"))
    large = _conv(features * ratio + features, p, "sofs.large1")
    large = tc.tanh(_conv(large, p, "sofs.large2"))
    fused = _conv(small + large, p, "sofs.fuse")
    m = tc.sigmoid(fused[:, 0:1] + p["sofs.skip"] * (m_hat - 0.5))
    e = tc.sigmoid(fused[:, 1:2])
    return m_hat, m, e


def background_update(c, b_prev, m, lam):
    return tc.safe_div(lam * b_prev + c - c * m, 1.0 + lam)


def robe_stage(c, b_prev, m, p, passthrough=False):
    """Background extraction: returns ``(b_hat, b, c_hat)``."""
    if np.any(tc.value(m) < 0.0) or np.any(tc.value(m) > 1.0):
        raise InvalidArgumentError("mask values must lie in [0, 1]")
    b_hat = background_update(c, b_prev, m, tc.softplus(p["lambda"]))
    if passthrough:
        b = tc.clamp01(b_hat)
        return b_hat, b, c * m + b
    u1 = tc.tanh(_conv(tc.concat([b_hat, m], axis=1), p, "robe.enc1"))
    u2 = tc.tanh(_conv(tc.avgpool2(u1), p, "robe.enc2"))
    u3 = tc.tanh(_conv(tc.avgpool2(u2), p, "robe.enc3"))
    d2 = tc.tanh(_conv(tc.upsample2(u3) + u2, p, "robe.dec2"))
    d1 = tc.tanh(_conv(tc.upsample2(d2) + u1, p, "robe.dec1"))
    b = tc.clamp01(b_hat + _conv(d1, p, "robe.head_b"))
    c_hat = c * m + b + _conv(d1, p, "robe.head_c")
    return b_hat, b, c_hat


def _check_batch(c, *others):
    n, _, h, w = np.shape(c)
    for x in others:
        s = np.shape(tc.value(x))
        if s[0] != n or s[-2:] != (h, w):
            raise InvalidArgumentError(f"shape mismatch: {s} vs image {np.shape(c)}")


def check_geometry(c):
    c = np.asarray(c)
    if c.ndim != 4:
        raise InvalidArgumentError(f"expected a (N, C, H, W) batch, got shape {c.shape}")
    h, w = c.shape[-2:]
    if h % 4 or w % 4 or min(h, w) < 8:
        raise InvalidArgumentError(f"unfolded model needs H, W divisible by 4 and >= 8, got {h}x{w}")


def forward(c, params: ParamSet, gt=None, values=None, features=None, init_mask=None,
            stage_features=None, with_loss=None):
    """Chain ``params.stages`` SOFS/ROBE stages over the batch ``c``.

    ``values`` overrides ``params.values`` (pass taped Vars here to train).
    ``stage_features`` optionally gives one feature tensor per stage.
    When ``gt`` is given (or ``with_loss`` is true) the deep-supervision loss
    is computed as well.
    """
    c = np.asarray(c, dtype=np.float64)
    check_geometry(c)
    if c.shape[1] != params.in_channels:
        raise InvalidArgumentError(f"params expect {params.in_channels} channels, image has {c.shape[1]}")
    if with_loss and gt is None:
        raise InvalidArgumentError("loss requested but no ground truth given")
    values = params.values if values is None else values
    feats = feature_bank(c) if features is None else features
    if stage_features is not None and len(stage_features) != params.stages:
        raise InvalidArgumentError("stage_features needs one entry per stage")
    n, _, h, w = c.shape
    m_prev = np.zeros((n, 1, h, w)) if init_mask is None else np.asarray(init_mask, dtype=np.float64)
    m_prev2 = m_prev
    b_prev = np.zeros_like(c)
    result = ForwardResult()
    if gt is not None:
        gt = np.asarray(gt, dtype=np.float64).reshape(n, 1, h, w)
        weights = pixel_weights(gt)
        gt_e = edge_ground_truth(gt)
    for k in range(1, params.stages + 1):
        p = {name[len(f"s{k}."):]: v for name, v in values.items() if name.startswith(f"s{k}.")}
        f_k = feats if stage_features is None else stage_features[k - 1]
        m_hat, m, e = sofs_stage(c, b_prev, m_prev, m_prev2, f_k, p, params.eps_l1, params.passthrough)
        b_hat, b, c_hat = robe_stage(c, b_prev, m, p, params.passthrough)
        result.stages.append(StageState(k=k, m_hat=m_hat, m=m, b_hat=b_hat, b=b, c_hat=c_hat, e=e))
        if gt is not None:
            bce, iou = weighted_terms_batched(m, gt, weights)
            result.stage_losses.append(
                StageLoss(bce=bce, iou=iou, dice=dice_loss(e, gt_e), mse=reconstruction_loss(c_hat, c))
            )
        m_prev2, m_prev, b_prev = m_prev, m, b
    if gt is not None:
        result.loss, result.contributions = combine_stage_losses([s.total for s in result.stage_losses])
    return result


def predict(params: ParamSet, images, stage=None):
    """Final (or ``stage``-th) soft masks for a list of (H, W, C) images, as (N, H, W)."""
    c = to_batch(images)
    out = forward(c, params)
    k = params.stages if stage is None else stage
    return np.asarray(tc.value(out.stages[k - 1].m))[:, 0]
