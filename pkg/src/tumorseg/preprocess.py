"""Foreground crop, nonzero z-scoring, patch fitting and augmentation.

Every forward transform records what it did in a :class:`PreprocMeta` so
predictions can be pasted back into the original 240x240x155 frame.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .volcore import LabelMap, MultiModalImage, RegionMasks, Volume3, labels_to_regions
from .volio import CaseBundle, write_npy

log = logging.getLogger(__name__)

DEFAULT_PATCH = (128, 160, 112)


class EmptyForegroundError(ValueError):
    pass


class MetaMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class PatchSpec:
    shape: tuple[int, int, int] = DEFAULT_PATCH

    def __post_init__(self):
        if len(self.shape) != 3 or not all(int(s) > 0 for s in self.shape):
            raise ValueError(f"patch shape must be three positive ints, got {self.shape}")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))


@dataclass
class PreprocMeta:
    original_shape: tuple[int, int, int]
    crop_bbox: tuple[tuple[int, int], ...]  # per axis [start, stop)
    pads: tuple[tuple[int, int], ...] = ((0, 0), (0, 0), (0, 0))
    # center-crop offsets applied after cropping when the foreground exceeds the patch
    patch_crop: tuple[tuple[int, int], ...] = ((0, 0), (0, 0), (0, 0))
    means: list[float] = field(default_factory=list)
    stds: list[float] = field(default_factory=list)
    degenerate: list[bool] = field(default_factory=list)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    geometry: dict | None = None  # NIfTI qform/sform of the source image

    def __post_init__(self):
        for (lo, hi), n in zip(self.crop_bbox, self.original_shape):
            if not 0 <= lo < hi <= n:
                raise MetaMismatchError(f"crop bbox {self.crop_bbox} outside shape {self.original_shape}")
        if any(p < 0 for pair in self.pads for p in pair):
            raise MetaMismatchError(f"negative pads {self.pads}")

    @property
    def cropped_shape(self) -> tuple[int, int, int]:
        return tuple(hi - lo for lo, hi in self.crop_bbox)  # type: ignore[return-value]

    @property
    def fitted_shape(self) -> tuple[int, int, int]:
        return tuple(
            n - clo - chi + plo + phi
            for n, (clo, chi), (plo, phi) in zip(self.cropped_shape, self.patch_crop, self.pads)
        )  # type: ignore[return-value]

    def to_json(self) -> dict:
        d = asdict(self)
        d["cropped_shape"] = list(self.cropped_shape)
        d["fitted_shape"] = list(self.fitted_shape)
        return d

    @classmethod
    def from_json(cls, d: dict) -> PreprocMeta:
        tup = lambda x: tuple(tuple(v) if isinstance(v, list) else v for v in x)  # noqa: E731
        return cls(
            original_shape=tuple(d["original_shape"]),
            crop_bbox=tup(d["crop_bbox"]),
            pads=tup(d["pads"]),
            patch_crop=tup(d["patch_crop"]),
            means=list(d["means"]),
            stds=list(d["stds"]),
            degenerate=list(d["degenerate"]),
            spacing=tuple(d["spacing"]),
            geometry=d.get("geometry"),
        )


def foreground_bbox(stack: np.ndarray) -> tuple[tuple[int, int], ...]:
    fg = np.any(stack != 0, axis=0)
    if not fg.any():
        raise EmptyForegroundError("image has no nonzero voxel in any modality")
    box = []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        hit = np.flatnonzero(fg.any(axis=other))
        box.append((int(hit[0]), int(hit[-1]) + 1))
    return tuple(box)


def crop_foreground(image: MultiModalImage) -> tuple[MultiModalImage, PreprocMeta]:
    stack = image.stack()
    bbox = foreground_bbox(stack)
    sl = tuple(slice(lo, hi) for lo, hi in bbox)
    cropped = MultiModalImage(
        tuple(Volume3(c.data[sl], c.spacing, c.geometry) for c in image.channels)  # type: ignore[arg-type]
    )
    return cropped, PreprocMeta(image.shape, bbox, spacing=image.spacing, geometry=image.geometry)


def znormalize_nonzero(vol: Volume3) -> tuple[Volume3, float, float, bool]:
    """Z-score the nonzero voxels; zeros stay zero.

    Returns ``(volume, mean, std, degenerate)``. A channel with at most one
    nonzero voxel or zero variance is degenerate: std is forced to 1.
    """
    data = vol.data.astype(np.float64)
    nz = data != 0
    n = int(nz.sum())
    if n == 0:
        return vol, 0.0, 1.0, True
    vals = data[nz]
    mean = float(vals.mean())
    std = float(vals.std())
    degenerate = n <= 1 or std == 0.0
    if degenerate:
        std = 1.0
    out = np.zeros_like(data)
    out[nz] = (vals - mean) / std
    return Volume3(out.astype(np.float32), vol.spacing, vol.geometry), mean, std, degenerate


def normalize_image(image: MultiModalImage, meta: PreprocMeta) -> tuple[MultiModalImage, PreprocMeta]:
    chans, means, stds, flags = [], [], [], []
    for c in image.channels:
        v, m, s, d = znormalize_nonzero(c)
        chans.append(v)
        means.append(m)
        stds.append(s)
        flags.append(d)
    return MultiModalImage(tuple(chans)), replace(meta, means=means, stds=stds, degenerate=flags)  # type: ignore[arg-type]


def _fit_amounts(n: int, target: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """(pad, crop) pairs for one axis; the extra odd voxel goes to the high side."""
    if n < target:
        d = target - n
        return (d // 2, d - d // 2), (0, 0)
    d = n - target
    return (0, 0), (d // 2, d - d // 2)


def fit_array(arr: np.ndarray, target) -> tuple[np.ndarray, tuple, tuple]:
    """Center pad/crop the trailing three axes of ``arr`` to ``target``."""
    pads, crops = [], []
    for n, t in zip(arr.shape[-3:], target):
        p, c = _fit_amounts(n, t)
        pads.append(p)
        crops.append(c)
    lead = arr.ndim - 3
    sl = (slice(None),) * lead + tuple(slice(lo, n - hi) for (lo, hi), n in zip(crops, arr.shape[-3:]))
    out = np.pad(arr[sl], [(0, 0)] * lead + pads)
    return out, tuple(pads), tuple(crops)


def fit_to_patch(image: MultiModalImage, spec: PatchSpec = PatchSpec(), meta: PreprocMeta | None = None):
    """Stack T1, T1Gd, T2W, T2-FLAIR and center pad/crop to ``spec.shape``."""
    stacked, pads, crops = fit_array(image.stack(), spec.shape)
    if meta is None:
        meta = PreprocMeta(
            image.shape, tuple((0, n) for n in image.shape), spacing=image.spacing, geometry=image.geometry
        )
    return stacked.astype(np.float32), replace(meta, pads=pads, patch_crop=crops)


def forward_geometry(arr: np.ndarray, meta: PreprocMeta) -> np.ndarray:
    """Apply meta's crop/pad chain to an original-frame array (trailing 3 axes)."""
    lead = arr.ndim - 3
    if tuple(arr.shape[-3:]) != tuple(meta.original_shape):
        raise MetaMismatchError(f"array {arr.shape[-3:]} vs meta original {meta.original_shape}")
    sl = (slice(None),) * lead + tuple(slice(lo, hi) for lo, hi in meta.crop_bbox)
    arr = arr[sl]
    sl = (slice(None),) * lead + tuple(
        slice(lo, n - hi) for (lo, hi), n in zip(meta.patch_crop, meta.cropped_shape)
    )
    return np.pad(arr[sl], [(0, 0)] * lead + list(meta.pads))


def restore_geometry(arr: np.ndarray, meta: PreprocMeta, fill=0) -> np.ndarray:
    """Invert fit + crop: paste ``arr`` back into an original-size grid.

    Works on label grids (X, Y, Z) and channel stacks (C, X, Y, Z). Voxels
    outside the foreground box (or removed by the patch center-crop) get
    ``fill``.
    """
    arr = np.asarray(arr)
    lead = arr.ndim - 3
    if tuple(arr.shape[-3:]) != meta.fitted_shape:
        raise MetaMismatchError(f"array spatial shape {arr.shape[-3:]} != fitted shape {meta.fitted_shape}")
    sl = (slice(None),) * lead + tuple(slice(lo, n - hi) for (lo, hi), n in zip(meta.pads, arr.shape[-3:]))
    unpadded = arr[sl]
    out = np.full(arr.shape[:lead] + tuple(meta.original_shape), fill, dtype=arr.dtype)
    dst = (slice(None),) * lead + tuple(
        slice(blo + clo, bhi - chi) for (blo, bhi), (clo, chi) in zip(meta.crop_bbox, meta.patch_crop)
    )
    out[dst] = unpadded
    return out


def restore_labels(labels: LabelMap | np.ndarray, meta: PreprocMeta) -> LabelMap:
    data = labels.data if isinstance(labels, LabelMap) else labels
    return LabelMap(restore_geometry(np.asarray(data, np.uint8), meta), meta.spacing, meta.geometry)


# -- augmentation -----------------------------------------------------------


@dataclass(frozen=True)
class AugmentSpec:
    patch: tuple[int, int, int] = DEFAULT_PATCH
    flip_prob: float = 0.5
    scale_prob: float = 1.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    shift_prob: float = 1.0
    shift_range: tuple[float, float] = (-0.1, 0.1)

    @classmethod
    def identity(cls, patch) -> AugmentSpec:
        return cls(tuple(patch), 0.0, 0.0, (1.0, 1.0), 0.0, (0.0, 0.0))


def random_crop(image: np.ndarray, masks: np.ndarray, patch, rng: np.random.Generator):
    """Uniform random crop of (C, X, Y, Z) arrays; pads first where too small."""
    pads = [((t - n) // 2, t - n - (t - n) // 2) if n < t else (0, 0) for n, t in zip(image.shape[1:], patch)]
    if any(p != (0, 0) for p in pads):
        image = np.pad(image, [(0, 0)] + pads)
        masks = np.pad(masks, [(0, 0)] + pads)
    origin = [int(rng.integers(0, n - t + 1)) for n, t in zip(image.shape[1:], patch)]
    sl = (slice(None),) + tuple(slice(o, o + t) for o, t in zip(origin, patch))
    return image[sl], masks[sl]


def augment(image: np.ndarray, masks: np.ndarray | RegionMasks, rng: np.random.Generator, spec: AugmentSpec = AugmentSpec()):
    """Random crop, per-axis flips, per-channel intensity scale and shift.

    ``image`` is (4, X, Y, Z) float32, ``masks`` (3, X, Y, Z). Returns the
    same kinds. Randomness is drawn in a fixed order so a seeded ``rng``
    replays exactly.
    """
    spacing = None
    if isinstance(masks, RegionMasks):
        spacing = masks.spacing
        masks = masks.data
    image, masks = random_crop(np.asarray(image, np.float32), np.asarray(masks), spec.patch, rng)
    for axis in (1, 2, 3):
        if rng.random() < spec.flip_prob:
            image = np.flip(image, axis)
            masks = np.flip(masks, axis)
    nch = image.shape[0]
    scale = np.ones(nch)
    shift = np.zeros(nch)
    for c in range(nch):
        if rng.random() < spec.scale_prob:
            scale[c] = rng.uniform(*spec.scale_range)
        if rng.random() < spec.shift_prob:
            shift[c] = rng.uniform(*spec.shift_range)
    image = (image * scale[:, None, None, None] + shift[:, None, None, None]).astype(np.float32)
    image = np.ascontiguousarray(image)
    masks = np.ascontiguousarray(masks)
    if spacing is not None:
        return image, RegionMasks(masks, spacing)
    return image, masks


# -- whole-case pipeline ------------------------------------------------------


@dataclass
class PreprocessedCase:
    case_id: str
    image: np.ndarray  # float32 (4, X, Y, Z)
    regions: np.ndarray | None  # uint8 (3, X, Y, Z)
    meta: PreprocMeta


def preprocess_case(bundle: CaseBundle, spec: PatchSpec | None = PatchSpec(), out_dir=None) -> PreprocessedCase:
    """crop -> normalize -> stack -> fit. ``spec=None`` skips fitting.

    When ``out_dir`` is given, writes ``{id}_img.npy``, ``{id}_reg.npy``
    (if a segmentation exists) and ``{id}_meta.json``.
    """
    cropped, meta = crop_foreground(bundle.image)
    normed, meta = normalize_image(cropped, meta)
    if spec is not None:
        img, meta = fit_to_patch(normed, spec, meta)
    else:
        img = normed.stack()
    for name, flag in zip(("t1n", "t1c", "t2w", "t2f"), meta.degenerate):
        if flag:
            log.warning("%s: modality %s is degenerate (constant or empty foreground)", bundle.case_id, name)
    regions = None
    if bundle.seg is not None:
        reg = labels_to_regions(bundle.seg).data.astype(np.uint8)
        regions = forward_geometry(reg, meta)
    case = PreprocessedCase(bundle.case_id, img, regions, meta)
    if out_dir is not None:
        save_preprocessed(case, out_dir)
    return case


def save_preprocessed(case: PreprocessedCase, out_dir) -> None:
    out_dir = Path(out_dir)
    write_npy(case.image, out_dir / f"{case.case_id}_img.npy")
    if case.regions is not None:
        write_npy(case.regions, out_dir / f"{case.case_id}_reg.npy")
    (out_dir / f"{case.case_id}_meta.json").write_text(json.dumps(case.meta.to_json(), indent=2))


def load_meta(path) -> PreprocMeta:
    return PreprocMeta.from_json(json.loads(Path(path).read_text()))
