import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tumorseg.preprocess import (
    AugmentSpec,
    EmptyForegroundError,
    MetaMismatchError,
    PatchSpec,
    PreprocMeta,
    augment,
    crop_foreground,
    fit_array,
    fit_to_patch,
    foreground_bbox,
    forward_geometry,
    load_meta,
    normalize_image,
    preprocess_case,
    restore_geometry,
    restore_labels,
    znormalize_nonzero,
)
from tumorseg.volcore import LabelMap, MultiModalImage, RegionMasks, Volume3, labels_to_regions
from tumorseg.volio import CaseBundle

from conftest import blob


def _case(rng, shape=(20, 18, 16), box=((3, 15), (2, 14), (4, 12)), spacing=(1.0, 1.0, 1.5)):
    img = np.zeros((4, *shape), np.float32)
    sl = tuple(slice(a, b) for a, b in box)
    img[(slice(None),) + sl] = rng.uniform(1, 100, size=(4,) + tuple(b - a for a, b in box))
    seg = np.zeros(shape, np.uint8)
    inner = tuple(slice(a + 2, b - 2) for a, b in box)
    seg[inner] = rng.integers(0, 4, size=tuple(b - a - 4 for a, b in box))
    return CaseBundle("C", MultiModalImage.from_array(img, spacing), LabelMap(seg, spacing))


def test_bbox_matches_argwhere(rng):
    for _ in range(30):
        stack = np.zeros((4, 9, 8, 7), np.float32)
        pts = rng.integers(0, [9, 8, 7], size=(int(rng.integers(1, 6)), 3))
        for p in pts:
            stack[int(rng.integers(4)), p[0], p[1], p[2]] = rng.normal() or 1.0
        idx = np.argwhere(stack.any(axis=0))
        expect = tuple((int(lo), int(hi) + 1) for lo, hi in zip(idx.min(0), idx.max(0)))
        assert foreground_bbox(stack) == expect


def test_empty_foreground():
    with pytest.raises(EmptyForegroundError):
        foreground_bbox(np.zeros((4, 3, 3, 3)))


def test_znorm_nonzero_population_std(rng):
    a = np.zeros((6, 6, 6), np.float32)
    a[1:5, 1:5, 1:5] = rng.uniform(5, 10, size=(4, 4, 4))
    v, mean, std, deg = znormalize_nonzero(Volume3(a))
    vals = a[a != 0].astype(np.float64)
    assert mean == pytest.approx(vals.mean()) and std == pytest.approx(vals.std(ddof=0))
    out = v.data[a != 0].astype(np.float64)
    assert abs(out.mean()) < 1e-6 and out.std() == pytest.approx(1.0, abs=1e-5)
    assert np.all(v.data[a == 0] == 0) and not deg


@pytest.mark.parametrize("fill", [0.0, 7.0])
def test_znorm_degenerate(fill):
    a = np.zeros((3, 3, 3), np.float32)
    a[1, 1, 1:] = fill
    v, _, std, deg = znormalize_nonzero(Volume3(a))
    assert deg and std == 1.0
    assert np.all(np.isfinite(v.data))


@pytest.mark.parametrize("n,t,pad,crop", [(5, 8, (1, 2), (0, 0)), (9, 6, (0, 0), (1, 2)), (6, 6, (0, 0), (0, 0)), (4, 7, (1, 2), (0, 0))])
def test_fit_puts_odd_voxel_high(n, t, pad, crop):
    arr = np.arange(n, dtype=np.float32).reshape(n, 1, 1)
    out, pads, crops = fit_array(arr, (t, 1, 1))
    assert out.shape == (t, 1, 1) and pads[0] == pad and crops[0] == crop
    assert out[pad[0], 0, 0] == crop[0]


@given(
    shape=st.tuples(*[st.integers(2, 12)] * 3),
    target=st.tuples(*[st.integers(1, 14)] * 3),
    data=st.data(),
)
@settings(max_examples=80, deadline=None)
def test_restore_inverts_forward(shape, target, data):
    bbox = []
    for n in shape:
        lo = data.draw(st.integers(0, n - 1))
        hi = data.draw(st.integers(lo + 1, n))
        bbox.append((lo, hi))
    cropped = tuple(hi - lo for lo, hi in bbox)
    _, pads, crops = fit_array(np.zeros(cropped), target)
    meta = PreprocMeta(shape, tuple(bbox), pads, crops)
    assert meta.fitted_shape == tuple(target)
    x = np.random.default_rng(0).integers(1, 9, size=(2, *shape)).astype(np.float32)
    fwd = forward_geometry(x, meta)
    assert fwd.shape == (2, *target)
    back = restore_geometry(fwd, meta)
    # retained region is the bbox shrunk by the patch crop
    keep = tuple(slice(lo + clo, hi - chi) for (lo, hi), (clo, chi) in zip(bbox, crops))
    assert np.array_equal(back[(slice(None),) + keep], x[(slice(None),) + keep])
    mask = np.ones(shape, bool)
    mask[keep] = False
    assert np.all(back[:, mask] == 0)
    assert np.array_equal(forward_geometry(back, meta), fwd)


def test_restore_shape_mismatch():
    meta = PreprocMeta((4, 4, 4), ((0, 4),) * 3)
    with pytest.raises(MetaMismatchError):
        restore_geometry(np.zeros((3, 3, 3)), meta)


def test_preprocess_case_restores_labels(rng, tmp_path):
    bundle = _case(rng)
    geo = {"qform_code": 1, "sform_code": 1, "qfac": 1.0}
    img = MultiModalImage(tuple(Volume3(c.data, c.spacing, geo) for c in bundle.image.channels))
    bundle = CaseBundle("C", img, LabelMap(bundle.seg.data, bundle.seg.spacing, geo))
    case = preprocess_case(bundle, PatchSpec((16, 16, 16)), tmp_path)
    assert case.image.shape == (4, 16, 16, 16) and case.image.dtype == np.float32
    assert case.regions.shape == (3, 16, 16, 16)
    assert case.meta.crop_bbox == ((3, 15), (2, 14), (4, 12))
    # the foreground fits, so labels come back exactly
    labels = LabelMap(_regions_to_label_array(case.regions), case.meta.spacing)
    back = restore_labels(labels, case.meta)
    assert back == bundle.seg and back.geometry == geo
    assert load_meta(tmp_path / "C_meta.json") == case.meta
    assert json.loads((tmp_path / "C_meta.json").read_text())["fitted_shape"] == [16, 16, 16]


def _regions_to_label_array(reg):
    from tumorseg.volcore import regions_to_labels

    return regions_to_labels(RegionMasks(reg)).data


def test_crop_then_normalize_meta(rng):
    bundle = _case(rng)
    cropped, meta = crop_foreground(bundle.image)
    normed, meta = normalize_image(cropped, meta)
    assert cropped.shape == (12, 12, 8)
    assert len(meta.means) == 4 and meta.degenerate == [False] * 4
    stacked, meta = fit_to_patch(normed, PatchSpec((10, 14, 8)), meta)
    assert stacked.shape == (4, 10, 14, 8)
    assert meta.pads == ((0, 0), (1, 1), (0, 0)) and meta.patch_crop == ((1, 1), (0, 0), (0, 0))


def test_augment_identity_and_determinism(rng):
    img = rng.normal(size=(4, 8, 8, 8)).astype(np.float32)
    masks = rng.random((3, 8, 8, 8)) < 0.3
    out, m = augment(img, masks, rng, AugmentSpec.identity((8, 8, 8)))
    assert np.array_equal(out, img) and np.array_equal(m, masks)
    spec = AugmentSpec((6, 5, 8))
    a = augment(img, masks, np.random.default_rng(3), spec)
    b = augment(img, masks, np.random.default_rng(3), spec)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert a[0].shape == (4, 6, 5, 8) and a[1].shape == (3, 6, 5, 8)


def test_augment_keeps_image_and_masks_aligned():
    shape = (12, 10, 9)
    wt = blob(shape, (4, 3, 5), 3)
    masks = np.stack([wt & blob(shape, (4, 3, 5), 1.5), wt, wt])
    img = np.stack([masks[0], masks[1], masks[2], masks[1]]).astype(np.float32) * 2 + 1
    spec = AugmentSpec((8, 8, 8), flip_prob=0.5, scale_prob=1.0, scale_range=(0.9, 1.1), shift_prob=1.0)
    for seed in range(20):
        im, m = augment(img, RegionMasks(masks), np.random.default_rng(seed), spec)
        assert isinstance(m, RegionMasks)
        for c in range(3):
            on, off = im[c][m.data[c]], im[c][~m.data[c]]
            # foreground voxels share one value, background another
            if on.size and off.size:
                assert np.ptp(on) < 1e-5 and np.ptp(off) < 1e-5 and on[0] > off[0]


def test_augment_intensity_ranges():
    img = np.ones((4, 4, 4, 4), np.float32)
    spec = AugmentSpec((4, 4, 4), flip_prob=0.0)
    for seed in range(50):
        out, _ = augment(img, np.zeros((3, 4, 4, 4), bool), np.random.default_rng(seed), spec)
        vals = out[:, 0, 0, 0]
        assert np.all(vals >= 0.9 - 0.1 - 1e-6) and np.all(vals <= 1.1 + 0.1 + 1e-6)


def test_labels_regions_consistency_after_preprocess(rng):
    bundle = _case(rng)
    case = preprocess_case(bundle, None)
    expect = forward_geometry(labels_to_regions(bundle.seg).data.astype(np.uint8), case.meta)
    assert np.array_equal(case.regions, expect)
    assert case.image.shape[1:] == case.meta.cropped_shape
