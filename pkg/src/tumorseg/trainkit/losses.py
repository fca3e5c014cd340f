"""Region losses with analytic gradients with respect to the logits.

Logit arrays carry the region channel on axis -4, i.e. (3, X, Y, Z) or
(B, 3, X, Y, Z). Everything is computed in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..inference import sigmoid

PT_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    focal_gamma: float = 2.0
    dice_smooth: float = 1e-5
    dice_weight: float = 1.0
    focal_weight: float = 1.0
    ds_weights: tuple[float, ...] = field(default_factory=lambda: default_ds_weights(4))

    def __post_init__(self):
        if self.focal_gamma < 0:
            raise ValueError("focal gamma must be >= 0")
        if self.dice_smooth <= 0:
            raise ValueError("dice smooth must be > 0")
        w = tuple(float(x) for x in self.ds_weights)
        if not w or min(w) < 0 or abs(sum(w) - 1.0) > 1e-9:
            raise ValueError(f"deep-supervision weights must be non-negative and sum to 1, got {w}")
        object.__setattr__(self, "ds_weights", w)


def default_ds_weights(levels: int = 4) -> tuple[float, ...]:
    """Weights proportional to 2**-level, normalized to sum to 1."""
    raw = np.array([2.0**-lvl for lvl in range(levels)])
    return tuple((raw / raw.sum()).tolist())


def _check(logits, targets):
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise ValueError(f"logits {logits.shape} and targets {targets.shape} differ")
    if logits.ndim < 4 or logits.shape[-4] != 3:
        raise ValueError(f"expected region channel of size 3 on axis -4, got {logits.shape}")
    return logits, targets


def batch_dice_loss(logits, targets, smooth: float = 1e-5) -> tuple[float, np.ndarray]:
    """Soft Dice pooled over the whole batch per channel, averaged over channels."""
    logits, targets = _check(logits, targets)
    p = sigmoid(logits)
    axes = tuple(a for a in range(p.ndim) if a != p.ndim - 4)
    inter = (p * targets).sum(axis=axes, keepdims=True)
    denom = p.sum(axis=axes, keepdims=True) + targets.sum(axis=axes, keepdims=True) + smooth
    num = 2.0 * inter + smooth
    nc = p.shape[-4]
    loss = float(np.mean(1.0 - num / denom))
    dl_dp = -(2.0 * targets * denom - num) / denom**2 / nc
    return loss, dl_dp * p * (1.0 - p)


def focal_loss(logits, targets, gamma: float = 2.0) -> tuple[float, np.ndarray]:
    """Mean of -(1 - p_t)**gamma * log(p_t); no class weighting."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    logits, targets = _check(logits, targets)
    p = sigmoid(logits)
    pos = targets > 0.5
    pt_raw = np.where(pos, p, 1.0 - p)
    pt = np.clip(pt_raw, PT_CLAMP, 1.0 - PT_CLAMP)
    q = 1.0 - pt
    log_pt = np.log(pt)
    qg = q**gamma
    loss = float(np.mean(-qg * log_pt))
    # d/dx with dp_t/dx = ±p_t q:  ±(gamma p_t q^gamma log p_t - q^(gamma+1))
    g = gamma * pt * qg * log_pt - qg * q
    g = np.where(pos, g, -g)
    g = np.where((pt_raw < PT_CLAMP) | (pt_raw > 1.0 - PT_CLAMP), 0.0, g)
    return loss, g / p.size


def dice_focal_loss(logits, targets, cfg: LossConfig = LossConfig()) -> tuple[float, np.ndarray, dict]:
    ld, gd = batch_dice_loss(logits, targets, cfg.dice_smooth)
    lf, gf = focal_loss(logits, targets, cfg.focal_gamma)
    loss = cfg.dice_weight * ld + cfg.focal_weight * lf
    grad = cfg.dice_weight * gd + cfg.focal_weight * gf
    return loss, grad, {"dice": ld, "focal": lf}


def downsample_targets(targets: np.ndarray, level: int) -> np.ndarray:
    """Corner-origin striding by 2**level over the three spatial axes."""
    s = 2**level
    return targets[..., ::s, ::s, ::s]


def ds_combined_loss(ds_logits, targets, cfg: LossConfig = LossConfig()) -> tuple[float, list[np.ndarray], dict]:
    """Weighted sum of dice+focal over deep-supervision levels (finest first)."""
    targets = np.asarray(targets, dtype=np.float64)
    if len(ds_logits) != len(cfg.ds_weights):
        raise ValueError(f"{len(ds_logits)} levels but {len(cfg.ds_weights)} weights")
    total, grads = 0.0, []
    parts = {"dice": 0.0, "focal": 0.0}
    for lvl, (logits, w) in enumerate(zip(ds_logits, cfg.ds_weights)):
        t = downsample_targets(targets, lvl)
        if np.shape(logits) != t.shape:
            raise ValueError(f"level {lvl}: logits {np.shape(logits)} vs downsampled targets {t.shape}")
        loss, grad, p = dice_focal_loss(logits, t, cfg)
        total += w * loss
        grads.append(w * grad)
        parts["dice"] += w * p["dice"]
        parts["focal"] += w * p["focal"]
    return total, grads, parts
