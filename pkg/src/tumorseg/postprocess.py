"""Probability maps to label maps: thresholds, component size filter, sweeps."""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .volcore import LabelMap, RegionMasks, RegionProbs, enforce_hierarchy, regions_to_labels

log = logging.getLogger(__name__)

CONNECTIVITY_RANK = {6: 1, 18: 2, 26: 3}

PROFILES = {
    # SSA: 0.7 for ET/TC, 0.5 for WT, no size filter
    "ssa": {"binarize_thresholds": (0.7, 0.7, 0.5), "min_sizes": (0, 0, 0)},
    # pediatric best row: min sizes 50/75/250
    "ped": {"binarize_thresholds": (0.5, 0.5, 0.5), "min_sizes": (50, 75, 250)},
}

# min-size rows swept for the pediatric task
PED_MIN_SIZE_GRID = ((100, 150, 500), (50, 75, 250), (25, 37, 125))


@dataclass(frozen=True)
class PostprocessConfig:
    binarize_thresholds: tuple[float, float, float] = (0.7, 0.7, 0.5)
    min_sizes: tuple[int, int, int] = (0, 0, 0)
    connectivity: int = 26

    def __post_init__(self):
        th = tuple(float(t) for t in self.binarize_thresholds)
        ms = tuple(int(m) for m in self.min_sizes)
        if len(th) != 3 or not all(0.0 < t < 1.0 for t in th):
            raise ValueError(f"thresholds must be three values in (0, 1), got {self.binarize_thresholds}")
        if len(ms) != 3 or min(ms) < 0:
            raise ValueError(f"min sizes must be three non-negative ints, got {self.min_sizes}")
        if self.connectivity not in CONNECTIVITY_RANK:
            raise ValueError(f"connectivity must be 6, 18 or 26, got {self.connectivity}")
        object.__setattr__(self, "binarize_thresholds", th)
        object.__setattr__(self, "min_sizes", ms)

    @classmethod
    def profile(cls, name: str, **overrides) -> PostprocessConfig:
        if name not in PROFILES:
            raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
        return cls(**{**PROFILES[name], **{k: v for k, v in overrides.items() if v is not None}})

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def binarize(probs: RegionProbs, thresholds=(0.7, 0.7, 0.5)) -> RegionMasks:
    if probs.kind != "probabilities":
        raise ValueError("binarize needs probabilities, got logits")
    th = np.asarray(thresholds, dtype=np.float64)
    if th.shape != (3,) or not ((th > 0) & (th < 1)).all():
        raise ValueError(f"thresholds must be three values in (0, 1), got {thresholds}")
    # compare in float32 so a voxel stored at exactly the threshold is included
    masks = probs.data >= th.astype(np.float32)[:, None, None, None]
    return RegionMasks(masks, probs.spacing)


def structure(connectivity: int) -> np.ndarray:
    if connectivity not in CONNECTIVITY_RANK:
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    return ndimage.generate_binary_structure(3, CONNECTIVITY_RANK[connectivity])


def connected_components(mask: np.ndarray, connectivity: int = 26) -> tuple[np.ndarray, np.ndarray]:
    """Label components 1..n in x-fastest scan order of their first voxel.

    Returns ``(labels, sizes)`` where ``sizes[i]`` is the voxel count of
    component ``i + 1``.
    """
    mask = np.asarray(mask, dtype=bool)
    # scipy numbers components in C raster order; on the transposed view that
    # is x-fastest order of the original
    labels_t, n = ndimage.label(mask.T, structure=structure(connectivity))
    labels = np.ascontiguousarray(labels_t.T).astype(np.int32)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:].astype(np.int64)
    return labels, sizes


def filter_min_size(mask: np.ndarray, min_size: int, connectivity: int = 26) -> np.ndarray:
    """Drop components with fewer than ``min_size`` voxels (size == min_size is kept)."""
    mask = np.asarray(mask, dtype=bool)
    if min_size < 0:
        raise ValueError("min_size must be >= 0")
    if min_size <= 1 or not mask.any():
        return mask.copy()
    labels, sizes = connected_components(mask, connectivity)
    keep = np.concatenate([[False], sizes >= min_size])
    return keep[labels]


def filter_regions(masks: RegionMasks, config: PostprocessConfig) -> RegionMasks:
    out = np.stack(
        [filter_min_size(masks.data[r], config.min_sizes[r], config.connectivity) for r in range(3)]
    )
    return RegionMasks(out, masks.spacing)


def postprocess(probs: RegionProbs, config: PostprocessConfig = PostprocessConfig(), geometry=None) -> LabelMap:
    """binarize -> per-region size filter -> nesting -> labels."""
    masks = binarize(probs, config.binarize_thresholds)
    masks = filter_regions(masks, config)
    return regions_to_labels(enforce_hierarchy(masks), geometry)


# -- sweeps -----------------------------------------------------------------------


@dataclass
class SweepRow:
    config: PostprocessConfig
    dice: dict[str, float]
    hd95: dict[str, float]
    mean_dice: float
    mean_hd95: float
    group: str = ""
    extra: dict = field(default_factory=dict)


def sweep_thresholds(
    cases: Sequence[tuple[RegionProbs, LabelMap]],
    grid: Sequence[PostprocessConfig],
    metric: Callable | None = None,
    group: str = "",
) -> list[SweepRow]:
    """Score every config on every case; best mean Dice first, ties by lower HD95.

    ``metric(pred_labels, gt_labels) -> CaseMetrics`` defaults to
    :func:`tumorseg.metrics.evaluate_case`.
    """
    from .metrics import aggregate, evaluate_case

    if not cases:
        raise ValueError("sweep needs at least one case")
    if not grid:
        raise ValueError("sweep needs at least one config")
    metric = metric or evaluate_case
    rows = []
    for cfg in grid:
        per_case = []
        for i, (probs, gt) in enumerate(cases):
            pred = postprocess(probs, cfg)
            cm = metric(pred, gt)
            if not cm.case_id:
                cm.case_id = f"case{i:03d}"
            per_case.append(cm)
        rep = aggregate(per_case)
        rows.append(SweepRow(cfg, rep.region_dice, rep.region_hd95, rep.mean_dice, rep.mean_hd95, group))
    # stable sort keeps grid order for exact ties
    return sorted(rows, key=lambda r: (-r.mean_dice, r.mean_hd95))


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    regions = list(rows[0].dice) if rows else ["ET", "TC", "WT"]
    w.writerow(
        ["group", "th_ET", "th_TC", "th_WT", "min_ET", "min_TC", "min_WT", "connectivity"]
        + [f"dice_{r}" for r in regions]
        + ["mean_dice"]
        + [f"hd95_{r}" for r in regions]
        + ["mean_hd95"]
    )
    for r in rows:
        c = r.config
        w.writerow(
            [r.group, *c.binarize_thresholds, *c.min_sizes, c.connectivity]
            + [f"{r.dice[k]:.6f}" for k in regions]
            + [f"{r.mean_dice:.6f}"]
            + [f"{r.hd95[k]:.6f}" for k in regions]
            + [f"{r.mean_hd95:.6f}"]
        )
    return buf.getvalue()


def format_min_size_table(groups: dict[str, Sequence[SweepRow]]) -> str:
    """Text table grouped by a label such as the learning rate, one row per min-size triple."""
    regions = None
    lines = []
    width = max([10, *(len(label) for label in groups)])
    for label, rows in groups.items():
        rows = sorted(rows, key=lambda r: tuple(-m for m in r.config.min_sizes))
        for i, r in enumerate(rows):
            if regions is None:
                regions = list(r.dice)
                header = (
                    f"{'Group':<{width}} | {'Min Size Th.':^17} | "
                    + " ".join(f"{'Dice ' + k:>9}" for k in regions)
                    + " | "
                    + " ".join(f"{'HD95 ' + k:>9}" for k in regions)
                )
                lines += [header, "-" * len(header)]
            ms = " ".join(f"{m:>5}" for m in r.config.min_sizes)
            lines.append(
                f"{(label if i == 0 else ''):<{width}} | {ms} | "
                + " ".join(f"{r.dice[k]:>9.3f}" for k in regions)
                + " | "
                + " ".join(f"{r.hd95[k]:>9.3f}" for k in regions)
            )
    return "\n".join(lines)
