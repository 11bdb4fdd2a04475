"""Segmentation energy: data fidelity, residual sparsity and their surrogates.

Images are ``(H, W, C)`` float64 arrays, masks ``(H, W)``.  A mask multiplies
every channel of the image, so the data term sums over channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

MASK_PROX_MODES = ("clamp", "clamp+tv")
BACKGROUND_PROX_MODES = ("clamp", "gaussian")

# uncertainty-removal bands
LOW_BAND = (0.1, 0.4)  # [0.1, 0.4) -> 0.1
HIGH_BAND = (0.6, 0.9)  # (0.6, 0.9] -> 0.9
IGNORE_BAND = (0.4, 0.6)  # [0.4, 0.6] -> w = 0


@dataclass(frozen=True)
class SolverConfig:
    alpha: float = 0.1
    mu: float = 1.0
    lam: float = 1.0
    lipschitz: float = 1.0
    eps_l1: float = 1e-3
    stages: int = 4
    paper_literal_qa: bool = False
    mask_prox: str = "clamp"
    background_prox: str = "clamp"
    tv_weight: float = 0.1
    threshold: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "mu", "lam", "lipschitz", "eps_l1", "tv_weight", "threshold"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
                raise InvalidArgumentError(f"{name} must be a finite number, got {v!r}")
        if self.alpha < 0:
            raise InvalidArgumentError("alpha must be >= 0")
        if self.mu <= 0:
            raise InvalidArgumentError("mu must be > 0")
        if self.lam < 0:
            raise InvalidArgumentError("lambda must be >= 0")
        if self.lipschitz <= 0:
            raise InvalidArgumentError("lipschitz must be > 0")
        if self.eps_l1 < 0:
            raise InvalidArgumentError("eps_l1 must be >= 0")
        if self.tv_weight < 0:
            raise InvalidArgumentError("tv_weight must be >= 0")
        if isinstance(self.stages, bool) or not isinstance(self.stages, int) or self.stages < 1:
            raise InvalidArgumentError("stages must be an integer >= 1")
        if self.mask_prox not in MASK_PROX_MODES:
            raise InvalidArgumentError(f"mask_prox must be one of {MASK_PROX_MODES}")
        if self.background_prox not in BACKGROUND_PROX_MODES:
            raise InvalidArgumentError(f"background_prox must be one of {BACKGROUND_PROX_MODES}")


@dataclass(frozen=True)
class ResidualContext:
    """Everything the mask update needs from the two previous masks.

    ``m_tilde``/``w`` come from M_{k-1}; ``w_prev``/``q_d`` from M_{k-2}.
    ``r_prev`` is the previous sparsity residual ``w_prev * (M_{k-1} - M~_{k-1})``.
    """

    m_tilde: np.ndarray
    w: np.ndarray
    m_prev: np.ndarray
    w_prev: np.ndarray
    r_prev: np.ndarray
    q_d: np.ndarray


def as_image(c):
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 2:
        c = c[:, :, None]
    if c.ndim != 3:
        raise InvalidArgumentError(f"image must be (H, W) or (H, W, C), got shape {c.shape}")
    return c


def as_mask(m, shape=None):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 3 and m.shape[-1] == 1:
        m = m[..., 0]
    if m.ndim != 2:
        raise InvalidArgumentError(f"mask must be (H, W), got shape {m.shape}")
    if shape is not None and m.shape != tuple(shape):
        raise InvalidArgumentError(f"mask shape {m.shape} does not match image {tuple(shape)}")
    return m


def uncertainty_removal(m):
    """Snap confident mask values to 0.1/0.9 and mark the ambiguous band.

    Returns ``(m_tilde, w)``: values in [0.1, 0.4) become 0.1, values in
    (0.6, 0.9] become 0.9, everything else passes through.  ``w`` is 0 on
    [0.4, 0.6] and 1 elsewhere.
    """
    m = np.asarray(m, dtype=np.float64)
    if np.any(~np.isfinite(m)) or np.any(m < 0.0) or np.any(m > 1.0):
        raise InvalidArgumentError("uncertainty_removal needs mask values in [0, 1]")
    low, high = uncertainty_bands(m)
    m_tilde = np.where(low, 0.1, np.where(high, 0.9, m))
    return m_tilde, attention_map(m)


def uncertainty_bands(m):
    low = (m >= LOW_BAND[0]) & (m < LOW_BAND[1])
    high = (m > HIGH_BAND[0]) & (m <= HIGH_BAND[1])
    return low, high


def attention_map(m):
    return np.where((m >= IGNORE_BAND[0]) & (m <= IGNORE_BAND[1]), 0.0, 1.0)


def build_context(m_prev, m_prev2):
    m_prev = np.asarray(m_prev, dtype=np.float64)
    m_tilde, w = uncertainty_removal(m_prev)
    m_tilde_prev, w_prev = uncertainty_removal(m_prev2)
    q_d = w_prev * m_tilde_prev
    r_prev = w_prev * m_prev - q_d
    return ResidualContext(m_tilde=m_tilde, w=w, m_prev=m_prev, w_prev=w_prev, r_prev=r_prev, q_d=q_d)


def l1_grad(r, eps_l1=1e-3):
    """Smoothed sign ``r / sqrt(r^2 + eps^2)``; exact sign (sign(0) = 0) at eps = 0."""
    if eps_l1 < 0:
        raise InvalidArgumentError("eps_l1 must be >= 0")
    r = np.asarray(r, dtype=np.float64)
    if eps_l1 == 0:
        return np.sign(r)
    return r / np.sqrt(r * r + eps_l1 * eps_l1)


def _check_pair(c, m):
    c = as_image(c)
    m = as_mask(m, c.shape[:2])
    return c, m


def data_energy(c, m, b):
    """0.5 * sum over pixels and channels of (C - C*M - B)^2."""
    c, m = _check_pair(c, m)
    b = as_image(b)
    if b.shape != c.shape:
        raise InvalidArgumentError(f"background shape {b.shape} does not match image {c.shape}")
    r = c - c * m[..., None] - b
    return 0.5 * float(np.sum(r * r))


def sparsity_energy(m, ctx, alpha):
    """Exact l1 residual penalty ``alpha * sum |w * (M - M~)|``."""
    m = as_mask(m, ctx.w.shape)
    return float(alpha) * float(np.sum(np.abs(ctx.w * (m - ctx.m_tilde))))


def _taylor_target(ctx, cfg):
    # surrogate sparsity residual is  w*(M - M~) - target
    return ctx.r_prev - l1_grad(ctx.r_prev, cfg.eps_l1) / cfg.lipschitz


def surrogate_mask_energy(m_hat, c, b_prev, ctx, cfg):
    """Quadratic model minimised by the closed-form mask update.

    data term + (mu/2)||M - M_{k-1}||^2
    + (alpha*L/2)||R - R_{k-1} + grad S(R_{k-1}) / L||^2,  R = w*(M - M~).
    """
    c, m_hat = _check_pair(c, m_hat)
    data = data_energy(c, m_hat, b_prev)
    prox = 0.5 * cfg.mu * float(np.sum((m_hat - ctx.m_prev) ** 2))
    resid = ctx.w * (m_hat - ctx.m_tilde) - _taylor_target(ctx, cfg)
    taylor = 0.5 * cfg.alpha * cfg.lipschitz * float(np.sum(resid * resid))
    return data + prox + taylor


def surrogate_mask_gradient(m_hat, c, b_prev, ctx, cfg):
    """Analytic gradient of :func:`surrogate_mask_energy` w.r.t. the mask."""
    c, m_hat = _check_pair(c, m_hat)
    b_prev = as_image(b_prev)
    r = c - c * m_hat[..., None] - b_prev
    g = -np.sum(c * r, axis=-1)
    g = g + cfg.mu * (m_hat - ctx.m_prev)
    resid = ctx.w * (m_hat - ctx.m_tilde) - _taylor_target(ctx, cfg)
    return g + cfg.alpha * cfg.lipschitz * ctx.w * resid


def background_energy(b_hat, c, m, b_prev, lam):
    """Background sub-problem: data term + (lambda/2)||B - B_{k-1}||^2."""
    c, m = _check_pair(c, m)
    b_hat = as_image(b_hat)
    b_prev = as_image(b_prev)
    return data_energy(c, m, b_hat) + 0.5 * float(lam) * float(np.sum((b_hat - b_prev) ** 2))
