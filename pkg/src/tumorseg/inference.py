"""Sliding-window prediction, blend kernels and probability ensembling."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from itertools import product
from typing import Protocol

import numpy as np

from .mednext import MedNeXtConfig, forward
from .params import ParamTree
from .volcore import GeometryError, RegionProbs


class Predictor(Protocol):
    window_shape: tuple[int, int, int]

    def predict(self, patch: np.ndarray) -> np.ndarray:
        """(4, *window) float32 -> (3, *window) probabilities in [0, 1]."""
        ...


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ConstantPredictor:
    values: tuple[float, float, float]
    window_shape: tuple[int, int, int]

    def predict(self, patch: np.ndarray) -> np.ndarray:
        out = np.empty((3, *patch.shape[1:]), dtype=np.float32)
        out[:] = np.asarray(self.values, np.float32)[:, None, None, None]
        return out


@dataclass
class MedNeXtPredictor:
    model: ParamTree
    config: MedNeXtConfig
    window_shape: tuple[int, int, int]

    def predict(self, patch: np.ndarray) -> np.ndarray:
        logits = forward(self.model, self.config, patch)[0]
        return sigmoid(logits).astype(np.float32)


@dataclass
class FunctionPredictor:
    """Wraps any ``(4, ...) -> (3, ...)`` probability function."""

    fn: object
    window_shape: tuple[int, int, int]

    def predict(self, patch: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(patch), dtype=np.float32)  # type: ignore[operator]


@dataclass(frozen=True)
class WindowPlan:
    volume_shape: tuple[int, int, int]
    window: tuple[int, int, int]
    overlap: float
    pads: tuple[tuple[int, int], ...]
    axis_origins: tuple[tuple[int, ...], ...]
    blend: str = "uniform"
    sigma_scale: float = 1.0 / 8
    floor: float = 1e-6

    @property
    def padded_shape(self) -> tuple[int, int, int]:
        return tuple(n + lo + hi for n, (lo, hi) in zip(self.volume_shape, self.pads))  # type: ignore[return-value]

    @property
    def origins(self) -> list[tuple[int, int, int]]:
        return list(product(*self.axis_origins))

    @property
    def steps(self) -> tuple[int, int, int]:
        return tuple(axis_step(w, self.overlap) for w in self.window)  # type: ignore[return-value]

    def to_json(self) -> dict:
        return {
            "volume_shape": list(self.volume_shape),
            "window": list(self.window),
            "overlap": self.overlap,
            "pads": [list(p) for p in self.pads],
            "steps": list(self.steps),
            "n_windows": len(self.origins),
            "blend": self.blend,
            "sigma_scale": self.sigma_scale,
            "floor": self.floor,
        }


def axis_step(window: int, overlap: float) -> int:
    # the epsilon absorbs float noise such as 160 * (1 - 0.7) = 47.99999...
    return max(1, math.floor(window * (1.0 - overlap) + 1e-9))


def plan_windows(volume_shape, window, overlap: float = 0.5, blend: str = "uniform", sigma_scale: float = 1.0 / 8, floor: float = 1e-6) -> WindowPlan:
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    if blend not in ("uniform", "gaussian"):
        raise ValueError(f"blend must be 'uniform' or 'gaussian', got {blend!r}")
    volume_shape = tuple(int(n) for n in volume_shape)
    window = tuple(int(w) for w in window)
    if len(window) != 3 or min(window) < 1 or len(volume_shape) != 3:
        raise ValueError(f"bad window {window} for volume {volume_shape}")
    pads, axes = [], []
    for n, w in zip(volume_shape, window):
        pad = (max(0, w - n) // 2, max(0, w - n) - max(0, w - n) // 2)
        extent = n + pad[0] + pad[1]
        step = axis_step(w, overlap)
        last = extent - w
        origins = list(range(0, last, step)) + [last]
        pads.append(pad)
        axes.append(tuple(origins))
    return WindowPlan(volume_shape, window, float(overlap), tuple(pads), tuple(axes), blend, sigma_scale, floor)  # type: ignore[arg-type]


def blend_kernel(window, mode: str = "uniform", sigma_scale: float = 1.0 / 8, floor: float = 1e-6) -> np.ndarray:
    window = tuple(int(w) for w in window)
    if mode == "uniform":
        return np.ones(window, dtype=np.float64)
    if mode != "gaussian":
        raise ValueError(f"unknown blend mode {mode!r}")
    k = np.ones(window, dtype=np.float64)
    for axis, w in enumerate(window):
        sigma = w * sigma_scale
        r = np.arange(w) - (w - 1) / 2.0
        g = np.exp(-(r**2) / (2 * sigma**2))
        shape = [1, 1, 1]
        shape[axis] = w
        k = k * g.reshape(shape)
    k = k / k.max()
    return np.maximum(k, floor)


def sliding_window_predict(volume: np.ndarray, predictor: Predictor, plan: WindowPlan, spacing=(1.0, 1.0, 1.0)) -> RegionProbs:
    volume = np.asarray(volume, dtype=np.float32)
    if tuple(volume.shape[1:]) != plan.volume_shape:
        raise GeometryError(f"volume {volume.shape[1:]} does not match plan {plan.volume_shape}")
    if tuple(predictor.window_shape) != plan.window:
        raise ValueError(f"predictor window {predictor.window_shape} != plan window {plan.window}")
    padded = np.pad(volume, [(0, 0)] + list(plan.pads))
    weights = blend_kernel(plan.window, plan.blend, plan.sigma_scale, plan.floor)
    acc = np.zeros((3, *plan.padded_shape), dtype=np.float64)
    wsum = np.zeros(plan.padded_shape, dtype=np.float64)
    for origin in plan.origins:
        sl = tuple(slice(o, o + w) for o, w in zip(origin, plan.window))
        probs = predictor.predict(padded[(slice(None),) + sl])
        if probs.shape != (3, *plan.window):
            raise ValueError(f"predictor returned {probs.shape}, expected {(3, *plan.window)}")
        acc[(slice(None),) + sl] += weights * probs
        wsum[sl] += weights
    if not (wsum > 0).all():
        raise RuntimeError("internal error: voxel with zero accumulated window weight")
    out = acc / wsum
    crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(plan.pads, plan.volume_shape))
    out = np.clip(out[(slice(None),) + crop], 0.0, 1.0)
    return RegionProbs(out.astype(np.float32), spacing, "probabilities")


def ensemble_mean(maps: Sequence[RegionProbs]) -> RegionProbs:
    """Equal-weight voxelwise mean, summed in list order."""
    if not maps:
        raise ValueError("ensemble needs at least one probability map")
    first = maps[0]
    acc = np.zeros(first.data.shape, dtype=np.float64)
    for m in maps:
        if m.kind != "probabilities":
            raise ValueError("ensemble members must be probabilities, not logits")
        if m.data.shape != first.data.shape or m.spacing != first.spacing:
            raise GeometryError(f"member geometry {m.data.shape}/{m.spacing} != {first.data.shape}/{first.spacing}")
        acc += m.data
    out = np.clip(acc / len(maps), 0.0, 1.0)
    return RegionProbs(out.astype(np.float32), first.spacing, "probabilities")
