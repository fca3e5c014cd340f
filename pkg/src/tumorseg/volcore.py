"""Volume and label containers plus the ET/TC/WT region algebra.

Arrays are indexed ``[x, y, z]``. On disk (NIfTI) voxels are stored
x-fastest, which is ``array.ravel(order="F")`` for these arrays.

Label convention: 0 background, 1 NETC, 2 SNFH/ED, 3 ET.
Region channel order everywhere: (ET, TC, WT).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

REGIONS = ("ET", "TC", "WT")
MODALITIES = ("t1n", "t1c", "t2w", "t2f")  # T1, T1Gd, T2W, T2-FLAIR
LABEL_VALUES = (0, 1, 2, 3)

Shape3 = tuple[int, int, int]
Spacing3 = tuple[float, float, float]


class InvalidLabelError(ValueError):
    pass


class GeometryError(ValueError):
    pass


def _check_spacing(spacing) -> Spacing3:
    sp = tuple(float(s) for s in spacing)
    if len(sp) != 3 or not all(s > 0 for s in sp):
        raise GeometryError(f"spacing must be three positive values, got {spacing!r}")
    return sp  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class Volume3:
    """One scalar 3D grid (float32) with voxel spacing in mm."""

    data: np.ndarray
    spacing: Spacing3 = (1.0, 1.0, 1.0)
    geometry: dict[str, Any] | None = None  # raw qform/sform header fields, passed through

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise GeometryError(f"Volume3 needs a non-empty 3D array, got shape {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def shape(self) -> Shape3:
        return tuple(self.data.shape)  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class LabelMap:
    """uint8 label grid over {0, 1, 2, 3}."""

    data: np.ndarray
    spacing: Spacing3 = (1.0, 1.0, 1.0)
    geometry: dict[str, Any] | None = None

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.ndim != 3 or min(raw.shape) < 1:
            raise GeometryError(f"LabelMap needs a non-empty 3D array, got shape {raw.shape}")
        bad = ~np.isin(raw, LABEL_VALUES)
        if bad.any():
            found = sorted(set(np.unique(raw[bad]).tolist()))
            raise InvalidLabelError(f"label values outside {{0,1,2,3}}: {found[:10]}")
        data = raw.astype(np.uint8, copy=True)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def shape(self) -> Shape3:
        return tuple(self.data.shape)  # type: ignore[return-value]

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class MultiModalImage:
    """Four co-registered channels in the order T1, T1Gd, T2W, T2-FLAIR."""

    channels: tuple[Volume3, Volume3, Volume3, Volume3]

    def __post_init__(self):
        chans = tuple(self.channels)
        if len(chans) != 4:
            raise GeometryError(f"expected 4 modalities, got {len(chans)}")
        ref = chans[0]
        for i, c in enumerate(chans[1:], start=1):
            if c.shape != ref.shape or c.spacing != ref.spacing:
                raise GeometryError(
                    f"modality {MODALITIES[i]} geometry {c.shape}/{c.spacing} "
                    f"differs from {MODALITIES[0]} {ref.shape}/{ref.spacing}"
                )
        object.__setattr__(self, "channels", chans)

    @classmethod
    def from_array(cls, arr: np.ndarray, spacing=(1.0, 1.0, 1.0), geometry=None) -> MultiModalImage:
        arr = np.asarray(arr)
        if arr.ndim != 4 or arr.shape[0] != 4:
            raise GeometryError(f"expected a 4xXxYxZ array, got {arr.shape}")
        return cls(tuple(Volume3(arr[i], spacing, geometry) for i in range(4)))  # type: ignore[arg-type]

    @property
    def shape(self) -> Shape3:
        return self.channels[0].shape

    @property
    def spacing(self) -> Spacing3:
        return self.channels[0].spacing

    @property
    def geometry(self):
        return self.channels[0].geometry

    def stack(self) -> np.ndarray:
        return np.stack([c.data for c in self.channels]).astype(np.float32)


@dataclass(frozen=True, eq=False)
class RegionProbs:
    """Three channels (ET, TC, WT) of logits or probabilities, shape (3, X, Y, Z)."""

    data: np.ndarray
    spacing: Spacing3 = (1.0, 1.0, 1.0)
    kind: str = "probabilities"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 4 or data.shape[0] != 3:
            raise GeometryError(f"RegionProbs needs shape (3, X, Y, Z), got {data.shape}")
        if self.kind not in ("logits", "probabilities"):
            raise ValueError(f"kind must be 'logits' or 'probabilities', got {self.kind!r}")
        if self.kind == "probabilities" and data.size and (data.min() < 0 or data.max() > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def shape(self) -> Shape3:
        return tuple(self.data.shape[1:])  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class RegionMasks:
    """Three boolean masks (ET, TC, WT), shape (3, X, Y, Z)."""

    data: np.ndarray
    spacing: Spacing3 = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data).astype(bool, copy=True)
        if data.ndim != 4 or data.shape[0] != 3:
            raise GeometryError(f"RegionMasks needs shape (3, X, Y, Z), got {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def shape(self) -> Shape3:
        return tuple(self.data.shape[1:])  # type: ignore[return-value]

    @classmethod
    def from_masks(cls, et, tc, wt, spacing=(1.0, 1.0, 1.0)) -> RegionMasks:
        shapes = {np.shape(et), np.shape(tc), np.shape(wt)}
        if len(shapes) != 1:
            raise GeometryError(f"region masks disagree in shape: {sorted(shapes)}")
        return cls(np.stack([et, tc, wt]), spacing)

    @property
    def et(self) -> np.ndarray:
        return self.data[0]

    @property
    def tc(self) -> np.ndarray:
        return self.data[1]

    @property
    def wt(self) -> np.ndarray:
        return self.data[2]

    def is_nested(self) -> bool:
        et, tc, wt = self.data
        return bool(np.all(tc | ~et) and np.all(wt | ~tc))

    def __eq__(self, other):
        if not isinstance(other, RegionMasks):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.data, other.data)


def labels_to_regions(labels: LabelMap) -> RegionMasks:
    lab = labels.data
    et = lab == 3
    tc = (lab == 1) | et
    wt = tc | (lab == 2)
    return RegionMasks(np.stack([et, tc, wt]), labels.spacing)


def enforce_hierarchy(masks: RegionMasks) -> RegionMasks:
    """Grow TC and WT so that ET is inside TC and TC inside WT."""
    et, tc, wt = masks.data
    tc = tc | et
    wt = wt | tc
    return RegionMasks(np.stack([et, tc, wt]), masks.spacing)


def regions_to_labels(masks: RegionMasks, geometry: dict[str, Any] | None = None) -> LabelMap:
    et, tc, wt = enforce_hierarchy(masks).data
    out = np.zeros(et.shape, dtype=np.uint8)
    out[wt] = 2
    out[tc] = 1
    out[et] = 3
    return LabelMap(out, masks.spacing, geometry)
