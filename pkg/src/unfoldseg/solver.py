"""Model-based alternating solver: closed-form mask/background updates plus explicit proxes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor_core
from .cos_model import (
    SolverConfig,
    as_image,
    as_mask,
    background_energy,
    build_context,
    data_energy,
    l1_grad,
    sparsity_energy,
    surrogate_mask_energy,
)
from .errors import DegeneracyError, InvalidArgumentError

BINOMIAL_3x3 = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0


@dataclass
class StageState:
    k: int
    m_hat: np.ndarray
    m: np.ndarray
    b_hat: np.ndarray
    b: np.ndarray
    c_hat: np.ndarray | None = None
    e: np.ndarray | None = None


@dataclass
class StageTrace:
    stage: int
    data_energy: float
    sparsity_energy: float
    surrogate_before: float
    surrogate_after: float
    background_before: float
    background_after: float


@dataclass
class SolveResult:
    stages: list[StageState] = field(default_factory=list)
    trace: list[StageTrace] = field(default_factory=list)

    @property
    def mask(self):
        return self.stages[-1].m

    def binary_mask(self, threshold=0.5):
        return (self.mask >= threshold).astype(np.float64)


def mask_closed_form(c, b_prev, ctx, cfg: SolverConfig):
    """Exact minimiser of the Taylor-surrogate mask energy, pixel by pixel.

    Q_a * M^ = Q_b * M_{k-1} + sum_c C^2 - sum_c C*B_{k-1} + Q_c.  With
    ``cfg.paper_literal_qa`` the alpha factor is dropped from the w^2 term of
    Q_a, which no longer yields a stationary point unless alpha == 1.
    """
    c = as_image(c)
    b_prev = as_image(b_prev)
    if b_prev.shape != c.shape:
        raise InvalidArgumentError(f"b_prev shape {b_prev.shape} does not match image {c.shape}")
    w, w_prev = ctx.w, ctx.w_prev
    c2 = np.sum(c * c, axis=-1)
    cb = np.sum(c * b_prev, axis=-1)
    al = cfg.alpha * cfg.lipschitz
    qa = c2 + (cfg.lipschitz if cfg.paper_literal_qa else al) * w * w + cfg.mu
    qb = al * w * w_prev + cfg.mu
    qc = al * w * (w * ctx.m_tilde - ctx.q_d) - cfg.alpha * w * l1_grad(ctx.r_prev, cfg.eps_l1)
    if np.any(qa <= 0):
        raise DegeneracyError("Q_a is not positive at some pixel")
    return (qb * ctx.m_prev + c2 - cb + qc) / qa


def background_closed_form(c, b_prev, m, lam):
    """B^ = (lambda * B_{k-1} + C - C*M) / (1 + lambda), per pixel and channel."""
    if lam < 0:
        raise InvalidArgumentError("lambda must be >= 0")
    c = as_image(c)
    m = as_mask(m, c.shape[:2])
    b_prev = as_image(b_prev)
    if b_prev.shape != c.shape:
        raise InvalidArgumentError(f"b_prev shape {b_prev.shape} does not match image {c.shape}")
    return (lam * b_prev + c - c * m[..., None]) / (1.0 + lam)


def tv_sweep(x, weight):
    """One anisotropic-TV subgradient step (sign(0) = 0, so flat regions stay put)."""
    sh = np.zeros_like(x)
    sv = np.zeros_like(x)
    sh[:, :-1] = np.sign(x[:, 1:] - x[:, :-1])
    sv[:-1, :] = np.sign(x[1:, :] - x[:-1, :])
    sub = -sh - sv
    sub[:, 1:] += sh[:, :-1]
    sub[1:, :] += sv[:-1, :]
    return x - weight * sub


def prox_mask_explicit(m_hat, cfg: SolverConfig):
    m = np.clip(m_hat, 0.0, 1.0)
    if cfg.mask_prox == "clamp+tv":
        m = np.clip(tv_sweep(m, cfg.tv_weight), 0.0, 1.0)
    return m


def prox_background_explicit(b_hat, cfg: SolverConfig):
    b = np.clip(b_hat, 0.0, 1.0)
    if cfg.background_prox == "gaussian":
        chw = np.moveaxis(b, -1, 0)
        blurred = np.stack([tensor_core.conv2d(ch, BINOMIAL_3x3) for ch in chw], axis=-1)
        b = np.clip(blurred, 0.0, 1.0)
    return b


def solve(c, cfg: SolverConfig | None = None, init_mask=None) -> SolveResult:
    """Run ``cfg.stages`` alternating mask/background updates from zero init.

    ``init_mask`` replaces the all-zero M_0 (e.g. a mask from another method).
    Stage 1 uses M_0 for both previous masks.
    """
    cfg = cfg or SolverConfig()
    c = as_image(c)
    if np.any(~np.isfinite(c)) or c.min() < 0.0 or c.max() > 1.0:
        raise InvalidArgumentError("image values must lie in [0, 1]")
    h, w = c.shape[:2]
    m_prev = np.zeros((h, w)) if init_mask is None else as_mask(init_mask, (h, w)).copy()
    m_prev2 = m_prev
    b_prev = np.zeros_like(c)
    result = SolveResult()
    for k in range(1, cfg.stages + 1):
        ctx = build_context(m_prev, m_prev2)
        m_hat = mask_closed_form(c, b_prev, ctx, cfg)
        m = prox_mask_explicit(m_hat, cfg)
        b_hat = background_closed_form(c, b_prev, m, cfg.lam)
        b = prox_background_explicit(b_hat, cfg)
        result.stages.append(StageState(k=k, m_hat=m_hat, m=m, b_hat=b_hat, b=b))
        result.trace.append(
            StageTrace(
                stage=k,
                data_energy=data_energy(c, m, b),
                sparsity_energy=sparsity_energy(m, ctx, cfg.alpha),
                surrogate_before=surrogate_mask_energy(m_prev, c, b_prev, ctx, cfg),
                surrogate_after=surrogate_mask_energy(m_hat, c, b_prev, ctx, cfg),
                background_before=background_energy(b_prev, c, m, b_prev, cfg.lam),
                background_after=background_energy(b_hat, c, m, b_prev, cfg.lam),
            )
        )
        m_prev2, m_prev, b_prev = m_prev, m, b
    return result
