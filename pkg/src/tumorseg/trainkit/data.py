"""Synthetic BraTS-like cases and cross-validation splits."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from ..volcore import LabelMap, MultiModalImage, Volume3
from ..volio import CaseBundle

# per-modality intensity offsets (t1n, t1c, t2w, t2f) added inside each region;
# every region moves at least one channel by several noise sigmas
OFFSETS = {
    "wt": (0.0, 0.0, 0.6, 1.2),
    "tc": (-0.5, 0.0, 0.0, 0.0),
    "et": (0.0, 1.5, 0.0, 0.0),
}


@dataclass(frozen=True)
class TumorSpec:
    radii: tuple[float, float, float] = (0.22, 0.13, 0.06)  # WT, TC, ET as fractions of min extent
    noise: float = 0.05
    center: tuple[float, float, float] | None = None  # fractional, random when None
    jitter: float = 0.15  # relative radius jitter


def _sphere(shape, center, radius):
    grids = np.ogrid[tuple(slice(0, n) for n in shape)]
    d2 = sum((g - c) ** 2 for g, c in zip(grids, center))
    return d2 <= radius**2


def synth_case(rng: np.random.Generator, shape=(48, 48, 40), spec: TumorSpec = TumorSpec(), case_id: str = "synth", spacing=(1.0, 1.0, 1.0)) -> CaseBundle:
    """Brain-like ellipsoid with nested spherical WT > TC > ET tumour.

    Labels are painted 2 (WT shell), 1 (TC shell), 3 (ET core); modality
    offsets make every region separable voxel by voxel.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) < 16:
        raise ValueError(f"synthetic shape must be at least 16^3, got {shape}")
    m = min(shape)
    jit = 1.0 + spec.jitter * (rng.random(3) * 2 - 1)
    r_wt, r_tc, r_et = (np.array(spec.radii) * m * jit).tolist()
    r_tc, r_et = min(r_tc, r_wt), min(r_et, r_tc)
    if r_et < 1.0:
        raise ValueError("tumor too small for this volume; increase radii")

    brain_semi = np.array(shape) * 0.42
    if r_wt >= brain_semi.min():
        raise ValueError(f"tumor radius {r_wt:.1f} does not fit in the brain ({brain_semi.min():.1f})")
    mid = (np.array(shape) - 1) / 2.0
    if spec.center is not None:
        center = np.array(spec.center) * (np.array(shape) - 1)
    else:
        slack = brain_semi - r_wt
        center = mid + (rng.random(3) * 2 - 1) * slack * 0.5
    if np.any(center - r_wt < 0) or np.any(center + r_wt > np.array(shape) - 1):
        raise ValueError("tumor larger than volume")

    grids = np.ogrid[tuple(slice(0, n) for n in shape)]
    brain = sum(((g - c) / s) ** 2 for g, c, s in zip(grids, mid, brain_semi)) <= 1.0
    wt = _sphere(shape, center, r_wt) & brain
    tc = _sphere(shape, center, r_tc) & brain
    et = _sphere(shape, center, r_et) & brain

    seg = np.zeros(shape, np.uint8)
    seg[wt] = 2
    seg[tc] = 1
    seg[et] = 3

    # smooth low-frequency "anatomy" so modalities are not flat
    phase = rng.random((4, 3)) * 2 * np.pi
    chans = []
    for c in range(4):
        smooth = 0.1 * sum(np.sin(2 * np.pi * g / n + phase[c, a]) for a, (g, n) in enumerate(zip(grids, shape)))
        base = 1.0 + 0.25 * c + smooth
        img = base + spec.noise * rng.standard_normal(shape)
        img = img + OFFSETS["wt"][c] * wt + OFFSETS["tc"][c] * tc + OFFSETS["et"][c] * et
        img = np.where(brain, np.maximum(img, 0.05), 0.0).astype(np.float32)
        chans.append(Volume3(img, spacing))
    return CaseBundle(case_id, MultiModalImage(tuple(chans)), LabelMap(seg, spacing))  # type: ignore[arg-type]


def synth_dataset(n: int, seed: int = 0, shape=(48, 48, 40), spec: TumorSpec = TumorSpec(), prefix: str = "SYN") -> list[CaseBundle]:
    # one child stream per case, so case i is the same whatever n is
    streams = np.random.SeedSequence(seed).spawn(n)
    return [synth_case(np.random.default_rng(s), shape, spec, f"{prefix}-{i:03d}") for i, s in enumerate(streams)]


@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train: tuple[str, ...]
    val: tuple[str, ...]


def kfold_split(ids: Sequence[str], k: int = 5, seed: int = 0) -> list[FoldSplit]:
    ids = sorted(set(ids))
    if len(ids) < k:
        raise ValueError(f"need at least {k} ids for {k}-fold CV, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    folds: list[list[str]] = [[] for _ in range(k)]
    for j, idx in enumerate(order):
        folds[j % k].append(ids[idx])
    out = []
    for i in range(k):
        val = tuple(sorted(folds[i]))
        train = tuple(sorted(x for j, f in enumerate(folds) if j != i for x in f))
        out.append(FoldSplit(i, train, val))
    return out
