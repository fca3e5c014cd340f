"""Per-voxel MLP (stack of 1x1x1 affine layers) with a hand-written backward pass."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from ..inference import sigmoid
from ..mednext import init_params
from ..params import Param, ParamTree

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class MicroConfig:
    depth: int = 2
    hidden: int = 16
    in_channels: int = 4
    out_channels: int = 3

    def __post_init__(self):
        if self.depth < 1 or self.hidden < 1:
            raise ValueError("depth and hidden must be >= 1")

    def widths(self) -> list[int]:
        return [self.in_channels] + [self.hidden] * (self.depth - 1) + [self.out_channels]

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        w = self.widths()
        out = []
        for i in range(self.depth):
            out += [(f"l{i}.weight", (w[i + 1], w[i])), (f"l{i}.bias", (w[i + 1],))]
        return out

    def to_dict(self) -> dict:
        return {"depth": self.depth, "hidden": self.hidden, "in_channels": self.in_channels, "out_channels": self.out_channels}


def build_micro(config: MicroConfig = MicroConfig(), seed: int = 0) -> ParamTree:
    return ParamTree((n, Param(v)) for n, v in init_params(config.layout(), seed).items())


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


def _affine(w, b, h):
    # h: (..., Cin, X, Y, Z) -> (..., Cout, X, Y, Z)
    out = np.moveaxis(np.tensordot(w, h, axes=(1, h.ndim - 4)), 0, -4)
    return out + b.reshape((-1, 1, 1, 1))


def _channels_first(a: np.ndarray) -> np.ndarray:
    return np.moveaxis(a, -4, 0).reshape(a.shape[-4], -1)


def micro_forward(params: Mapping[str, np.ndarray] | ParamTree, config: MicroConfig, x: np.ndarray, keep: bool = False):
    """Logits for (..., 4, X, Y, Z) input. With ``keep`` also returns the activation cache."""
    get = params.array if isinstance(params, ParamTree) else (lambda n: params[n])
    h = np.asarray(x, dtype=np.float64)
    cache = []
    for i in range(config.depth):
        pre_in = h
        z = _affine(np.asarray(get(f"l{i}.weight"), np.float64), np.asarray(get(f"l{i}.bias"), np.float64), h)
        cache.append((pre_in, z))
        h = _gelu(z) if i < config.depth - 1 else z
    return (h, cache) if keep else h


def micro_backward(params, config: MicroConfig, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    get = params.array if isinstance(params, ParamTree) else (lambda n: params[n])
    grads = {}
    g = np.asarray(dlogits, dtype=np.float64)
    for i in reversed(range(config.depth)):
        h_in, z = cache[i]
        if i < config.depth - 1:
            g = g * _gelu_grad(z)
        g2 = _channels_first(g)
        grads[f"l{i}.weight"] = g2 @ _channels_first(h_in).T
        grads[f"l{i}.bias"] = g2.sum(axis=1)
        if i > 0:
            w = np.asarray(get(f"l{i}.weight"), np.float64)
            g = np.moveaxis(np.tensordot(w.T, g, axes=(1, g.ndim - 4)), 0, -4)
    return grads


@dataclass
class MicroPredictor:
    params: ParamTree
    config: MicroConfig
    window_shape: tuple[int, int, int]

    def predict(self, patch: np.ndarray) -> np.ndarray:
        return sigmoid(micro_forward(self.params, self.config, patch)).astype(np.float32)
