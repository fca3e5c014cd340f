"""Dice, HD95, lesion-wise scores and table-style aggregation.

HD95 here is the 95th percentile (linear interpolation) of the pooled
surface distances in both directions, not the max of two directed
percentiles. Empty-vs-nonempty comparisons and missed or spurious lesions
score :data:`HD95_PENALTY` mm.
"""

from __future__ import annotations

import csv
import io
import json
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .distance import edt_squared
from .postprocess import connected_components
from .volcore import REGIONS, GeometryError, LabelMap, labels_to_regions

HD95_PENALTY = 374.0


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise GeometryError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _check_pair(pred, gt)
    p, g = int(pred.sum()), int(gt.sum())
    if p + g == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, gt).sum()) / (p + g)


_SIX = ndimage.generate_binary_structure(3, 1)


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with at least one face neighbour outside (image border counts as outside)."""
    mask = np.asarray(mask, dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=_SIX, border_value=0)
    return mask & ~eroded


def _pooled_distances_fast(pred, gt, spacing) -> np.ndarray:
    sp, sg = surface_voxels(pred), surface_voxels(gt)
    d_pg = np.sqrt(edt_squared(sg, spacing)[sp])
    d_gp = np.sqrt(edt_squared(sp, spacing)[sg])
    return np.concatenate([d_pg, d_gp])


def _min_dists_brute(a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> np.ndarray:
    out = np.empty(len(a))
    for s in range(0, len(a), chunk):
        diff = a[s : s + chunk, None, :] - b[None, :, :]
        d2 = (diff[..., 0] ** 2 + diff[..., 1] ** 2) + diff[..., 2] ** 2
        out[s : s + chunk] = np.sqrt(d2.min(axis=1))
    return out


def _pooled_distances_brute(pred, gt, spacing) -> np.ndarray:
    sp = np.argwhere(surface_voxels(pred)) * np.asarray(spacing, dtype=np.float64)
    sg = np.argwhere(surface_voxels(gt)) * np.asarray(spacing, dtype=np.float64)
    return np.concatenate([_min_dists_brute(sp, sg), _min_dists_brute(sg, sp)])


def hd95(pred: np.ndarray, gt: np.ndarray, spacing=(1.0, 1.0, 1.0), method: str = "edt") -> float:
    """95th-percentile symmetric surface distance in mm.

    ``method="edt"`` uses the distance transform; ``"brute"`` compares every
    pair of surface voxels and exists as a reference.
    """
    pred, gt = _check_pair(pred, gt)
    if len(spacing) != 3 or min(spacing) <= 0:
        raise GeometryError(f"bad spacing {spacing}")
    hp, hg = pred.any(), gt.any()
    if not hp and not hg:
        return 0.0
    if hp != hg:
        return HD95_PENALTY
    if method == "edt":
        d = _pooled_distances_fast(pred, gt, spacing)
    elif method == "brute":
        d = _pooled_distances_brute(pred, gt, spacing)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(np.percentile(d, 95))


@dataclass(frozen=True)
class LesionOptions:
    connectivity: int = 26
    dilation_iters: int = 3
    min_lesion_volume: int = 0


def lesionwise(pred, gt, spacing=(1.0, 1.0, 1.0), opts: LesionOptions = LesionOptions()) -> tuple[float, float]:
    """Per-lesion Dice/HD95 averaged over gt lesions plus false-positive components."""
    pred, gt = _check_pair(pred, gt)
    if not pred.any() and not gt.any():
        return 1.0, 0.0
    gt_lab, gt_sizes = connected_components(gt, opts.connectivity)
    pr_lab, pr_sizes = connected_components(pred, opts.connectivity)
    gt_ids = [i + 1 for i, s in enumerate(gt_sizes) if s > opts.min_lesion_volume]
    pr_ids = [i + 1 for i, s in enumerate(pr_sizes) if s > opts.min_lesion_volume]
    cube = np.ones((3, 3, 3), dtype=bool)

    dices, hds = [], []
    matched_pred: set[int] = set()
    for g in gt_ids:
        lesion = gt_lab == g
        grown = ndimage.binary_dilation(lesion, structure=cube, iterations=opts.dilation_iters) if opts.dilation_iters else lesion
        hits = set(np.unique(pr_lab[grown]).tolist()) & set(pr_ids)
        matched_pred |= hits
        if not hits:
            dices.append(0.0)
            hds.append(HD95_PENALTY)
            continue
        union = np.isin(pr_lab, sorted(hits))
        dices.append(dice(union, lesion))
        hds.append(hd95(union, lesion, spacing))
    for p in pr_ids:
        if p not in matched_pred:
            dices.append(0.0)
            hds.append(HD95_PENALTY)
    if not dices:
        # everything fell below min_lesion_volume
        return 1.0, 0.0
    return float(np.mean(dices)), float(np.mean(hds))


@dataclass
class CaseMetrics:
    case_id: str
    dice: dict[str, float]
    hd95: dict[str, float]
    lw_dice: dict[str, float] | None = None
    lw_hd95: dict[str, float] | None = None
    empty_gt: dict[str, bool] = field(default_factory=dict)
    empty_pred: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        for r, v in self.dice.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{self.case_id}/{r}: dice {v} outside [0, 1]")
        for r, v in self.hd95.items():
            if v < 0:
                raise ValueError(f"{self.case_id}/{r}: negative hd95 {v}")

    @property
    def regions(self) -> list[str]:
        return list(self.dice)


def evaluate_case(pred: LabelMap, gt: LabelMap, case_id: str = "", lesion: LesionOptions | None = None) -> CaseMetrics:
    if pred.shape != gt.shape:
        raise GeometryError(f"{case_id}: pred shape {pred.shape} != gt shape {gt.shape}")
    spacing = gt.spacing
    rp, rg = labels_to_regions(pred).data, labels_to_regions(gt).data
    cm = CaseMetrics(case_id, {}, {}, {} if lesion else None, {} if lesion else None)
    for i, name in enumerate(REGIONS):
        cm.dice[name] = dice(rp[i], rg[i])
        cm.hd95[name] = hd95(rp[i], rg[i], spacing)
        cm.empty_gt[name] = not rg[i].any()
        cm.empty_pred[name] = not rp[i].any()
        if lesion:
            cm.lw_dice[name], cm.lw_hd95[name] = lesionwise(rp[i], rg[i], spacing, lesion)  # type: ignore[index]
    return cm


@dataclass
class AggregateReport:
    region_dice: dict[str, float]
    region_hd95: dict[str, float]
    mean_dice: float
    mean_hd95: float
    n_cases: int
    lw_region_dice: dict[str, float] | None = None
    lw_region_hd95: dict[str, float] | None = None
    mode: str = "region-mean"


def mean_of_regions(values: dict[str, float] | Sequence[float]) -> float:
    vals = list(values.values()) if isinstance(values, dict) else list(values)
    return float(np.mean(vals))


def aggregate(cases: Sequence[CaseMetrics], mode: str = "region-mean") -> AggregateReport:
    """Average over cases per region, then over regions.

    ``mode="case-mean"`` instead averages each case's region mean; for
    complete tables both orders give the same number, they differ only if
    regions are missing for some cases.
    """
    if not cases:
        raise ValueError("aggregate needs at least one case")
    regions = cases[0].regions
    for c in cases:
        if c.regions != regions:
            raise ValueError(f"{c.case_id}: regions {c.regions} differ from {regions}")

    def per_region(attr):
        if any(getattr(c, attr) is None for c in cases):
            return None
        return {r: float(np.mean([getattr(c, attr)[r] for c in cases])) for r in regions}

    rd, rh = per_region("dice"), per_region("hd95")
    if mode == "region-mean":
        md, mh = mean_of_regions(rd), mean_of_regions(rh)
    elif mode == "case-mean":
        md = float(np.mean([mean_of_regions(c.dice) for c in cases]))
        mh = float(np.mean([mean_of_regions(c.hd95) for c in cases]))
    else:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    return AggregateReport(rd, rh, md, mh, len(cases), per_region("lw_dice"), per_region("lw_hd95"), mode)


def report_json(cases: Sequence[CaseMetrics], options: dict | None = None, mode: str = "region-mean") -> str:
    cases = sorted(cases, key=lambda c: c.case_id)
    return json.dumps(
        {
            "options": options or {},
            "cases": [asdict(c) for c in cases],
            "aggregate": asdict(aggregate(cases, mode)),
        },
        indent=2,
    )


def report_csv(cases: Sequence[CaseMetrics], mode: str = "region-mean") -> str:
    """One row per case and region, then an aggregate row in table column order."""
    cases = sorted(cases, key=lambda c: c.case_id)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case_id", "region", "dice", "hd95", "lw_dice", "lw_hd95"])
    for c in cases:
        for r in c.regions:
            lw_d = "" if c.lw_dice is None else f"{c.lw_dice[r]:.6f}"
            lw_h = "" if c.lw_hd95 is None else f"{c.lw_hd95[r]:.6f}"
            w.writerow([c.case_id, r, f"{c.dice[r]:.6f}", f"{c.hd95[r]:.6f}", lw_d, lw_h])
    rep = aggregate(cases, mode)
    regions = list(rep.region_dice)
    w.writerow([])
    w.writerow([f"Dice {r}" for r in regions] + ["Avg Dice"] + [f"HD95 {r}" for r in regions] + ["Avg HD95"])
    w.writerow(
        [f"{rep.region_dice[r]:.4f}" for r in regions]
        + [f"{rep.mean_dice:.4f}"]
        + [f"{rep.region_hd95[r]:.3f}" for r in regions]
        + [f"{rep.mean_hd95:.3f}"]
    )
    return buf.getvalue()
