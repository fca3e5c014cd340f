"""Schedule-free AdamW over a :class:`~tumorseg.params.ParamTree`.

Per step t (1-based), for each trainable parameter::

    y   = (1 - beta1) z + beta1 x          # gradient is taken here
    v   = beta2 v + (1 - beta2) g^2
    z   = z - lr_t (g / (sqrt(v / (1 - beta2^t)) + eps) + wd y)
    c   = lr_t^2 / sum_{i<=t} lr_i^2
    x   = (1 - c) x + c z                  # x is what gets evaluated

``lr_t = lr * min(1, t / warmup_steps)`` (no warmup when warmup_steps == 0).
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass

import numpy as np

from ..params import ParamTree


@dataclass
class SFAdamWState:
    z: dict[str, np.ndarray]
    x: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    lr: float = 0.0027
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_steps: int = 0
    t: int = 0
    lr_sq_sum: float = 0.0
    last_loss: float | None = None

    def current_lr(self, t: int) -> float:
        if self.warmup_steps > 0:
            return self.lr * min(1.0, t / self.warmup_steps)
        return self.lr


def sfadamw_init(
    params: ParamTree, lr: float = 0.0027, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0, warmup_steps: int = 0
) -> SFAdamWState:
    trainable = params.trainable()
    z = {n: params.array(n).astype(np.float64) for n in trainable}
    return SFAdamWState(
        z=z,
        x={n: a.copy() for n, a in z.items()},
        v={n: np.zeros_like(a) for n, a in z.items()},
        lr=float(lr),
        beta1=float(betas[0]),
        beta2=float(betas[1]),
        eps=float(eps),
        weight_decay=float(weight_decay),
        warmup_steps=int(warmup_steps),
    )


GradFn = Callable[[Mapping[str, np.ndarray]], "Mapping[str, np.ndarray] | tuple[float, Mapping[str, np.ndarray]]"]


def interpolate(state: SFAdamWState, params: ParamTree) -> dict[str, np.ndarray]:
    """The gradient point y; frozen parameters pass through unchanged."""
    b1 = state.beta1
    y = {}
    for n in params:
        if n in state.z:
            y[n] = (1.0 - b1) * state.z[n] + b1 * state.x[n]
        else:
            y[n] = params.array(n).astype(np.float64)
    return y


def sfadamw_step(state: SFAdamWState, params: ParamTree, grad_fn: GradFn) -> tuple[SFAdamWState, ParamTree]:
    """Advance one step in place and return ``(state, params_at_x)``.

    ``grad_fn`` receives all parameters (float64) at y and returns either a
    gradient dict or ``(loss, gradient dict)``. Frozen parameters keep their
    original arrays, byte for byte.
    """
    t = state.t + 1
    y = interpolate(state, params)
    res = grad_fn(y)
    if isinstance(res, tuple):
        loss, grads = res
        state.last_loss = float(loss)
    else:
        grads = res
    for n in state.z:
        g = np.asarray(grads[n], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            bad = int((~np.isfinite(g)).sum())
            raise FloatingPointError(
                f"step {t}: gradient of {n!r} has {bad} non-finite entries "
                f"(max |y| = {np.abs(y[n]).max():.3g}, last loss {state.last_loss})"
            )
    lr_t = state.current_lr(t)
    state.lr_sq_sum += lr_t**2
    c = lr_t**2 / state.lr_sq_sum if state.lr_sq_sum > 0 else 0.0
    bc = 1.0 - state.beta2**t
    for n in state.z:
        g = np.asarray(grads[n], dtype=np.float64)
        v = state.v[n]
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        denom = np.sqrt(v / bc) + state.eps
        state.z[n] = state.z[n] - lr_t * (g / denom + state.weight_decay * y[n])
        state.x[n] = (1.0 - c) * state.x[n] + c * state.z[n]
    state.t = t
    return state, params.replace_values({n: a.astype(np.float32) for n, a in state.x.items()})
