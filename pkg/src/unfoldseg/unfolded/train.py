"""Adam training loop for the unfolded network."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import tensor_core as tc
from ..errors import InvalidArgumentError
from ..metrics import iou
from ..synth import SplitMix64
from .features import feature_bank
from .network import check_geometry, forward, to_batch
from .params import ParamSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-4
    batch_size: int = 4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainRecord:
    step: int
    loss: float
    bce: float
    iou_loss: float
    dice: float
    mse: float


@dataclass
class TrainResult:
    params: ParamSet
    trace: list = field(default_factory=list)


def loss_and_grads(params: ParamSet, c, gt, features=None):
    """Taped forward + backward on one batch. Returns (ForwardResult, grads)."""
    tape = tc.Tape()
    values = {name: tape.param(name, v) for name, v in params.values.items()}
    out = forward(c, params, gt=gt, values=values, features=features)
    return out, tape.backward(out.loss)


def _record(step, out):
    parts = {"bce": 0.0, "iou": 0.0, "dice": 0.0, "mse": 0.0}
    K = len(out.stage_losses)
    for k, sl in enumerate(out.stage_losses, 1):
        wk = 2.0 ** (k - K)
        for name in parts:
            parts[name] += wk * float(tc.value(getattr(sl, name)))
    return TrainRecord(step, float(tc.value(out.loss)), parts["bce"], parts["iou"], parts["dice"], parts["mse"])


class Adam:
    def __init__(self, params: ParamSet, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros_like(v) for n, v in params.values.items()}
        self.v = {n: np.zeros_like(v) for n, v in params.values.items()}
        self.t = 0

    def step(self, params: ParamSet, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            update = (self.m[name] / corr1) / (np.sqrt(self.v[name] / corr2) + self.eps)
            params.values[name] = params.values[name] - self.lr * update


def train(dataset, cfg: TrainConfig, params_init: ParamSet, log_every=0) -> TrainResult:
    """Train on ``dataset``, a list of ``(c, gt)`` with c (H, W, C) and gt (H, W).

    Mini-batches are drawn with replacement from a seeded stream.
    """
    if not dataset:
        raise InvalidArgumentError("training dataset is empty")
    if cfg.steps < 0 or cfg.batch_size < 1 or cfg.lr < 0:
        raise InvalidArgumentError("need steps >= 0, batch_size >= 1, lr >= 0")
    c_all = to_batch([c for c, _ in dataset])
    check_geometry(c_all)
    gt_all = to_batch([gt for _, gt in dataset])
    f_all = feature_bank(c_all)
    params = params_init.copy()
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = SplitMix64(cfg.seed, 29)
    n = len(dataset)
    result = TrainResult(params=params)
    for step in range(cfg.steps):
        idx = (rng.uniform(cfg.batch_size) * n).astype(int)
        out, grads = loss_and_grads(params, c_all[idx], gt_all[idx], f_all[idx])
        result.trace.append(_record(step, out))
        opt.step(params, grads)
        if log_every and step % log_every == 0:
            log.info("step %d loss %.5f", step, result.trace[-1].loss)
    return result


def evaluate_iou(params: ParamSet, dataset, stage=None, threshold=0.5):
    """Mean IoU of thresholded stage masks (final stage by default)."""
    c = to_batch([c for c, _ in dataset])
    out = forward(c, params)
    k = params.stages if stage is None else stage
    masks = np.asarray(tc.value(out.stages[k - 1].m))[:, 0]
    return float(np.mean([iou((m >= threshold).astype(float), gt) for m, (_, gt) in zip(masks, dataset)]))


def reconstruction_mse(params: ParamSet, dataset, stage=None):
    c = to_batch([c for c, _ in dataset])
    out = forward(c, params)
    k = params.stages if stage is None else stage
    return float(np.mean((np.asarray(tc.value(out.stages[k - 1].c_hat)) - c) ** 2))


def dataset_loss(params: ParamSet, dataset):
    c = to_batch([c for c, _ in dataset])
    gt = to_batch([gt for _, gt in dataset])
    return float(tc.value(forward(c, params, gt=gt).loss))

