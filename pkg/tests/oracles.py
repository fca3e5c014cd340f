"""Slow reference implementations used only by the tests."""

from collections import deque
from itertools import product

import numpy as np


def neighbor_offsets(connectivity):
    offs = []
    for d in product((-1, 0, 1), repeat=3):
        n = sum(abs(v) for v in d)
        if n == 0:
            continue
        if (connectivity == 6 and n == 1) or (connectivity == 18 and n <= 2) or connectivity == 26:
            offs.append(d)
    return offs


def bfs_components(mask, connectivity):
    """Breadth-first labeling; components numbered by first voxel in x-fastest order."""
    mask = np.asarray(mask, bool)
    padded = np.pad(mask, 1)
    shape = padded.shape
    flat = padded.ravel(order="F")
    strides = (1, shape[0], shape[0] * shape[1])
    deltas = [d[0] * strides[0] + d[1] * strides[1] + d[2] * strides[2] for d in neighbor_offsets(connectivity)]
    lab = np.zeros(flat.size, np.int64)
    sizes = []
    for start in np.flatnonzero(flat):
        if lab[start]:
            continue
        cur = len(sizes) + 1
        lab[start] = cur
        q = deque([start])
        n = 0
        while q:
            v = q.popleft()
            n += 1
            for d in deltas:
                u = v + d
                if flat[u] and not lab[u]:
                    lab[u] = cur
                    q.append(u)
        sizes.append(n)
    out = lab.reshape(shape, order="F")[1:-1, 1:-1, 1:-1]
    return out, np.array(sizes, np.int64)


def bfs_filter(mask, min_size, connectivity):
    lab, sizes = bfs_components(mask, connectivity)
    keep = np.concatenate([[False], sizes >= min_size])
    return keep[lab]


def surface(mask):
    mask = np.asarray(mask, bool)
    p = np.pad(mask, 1)
    inner = p[1:-1, 1:-1, 1:-1].copy()
    for ax in range(3):
        for s in (-1, 1):
            inner &= np.roll(p, s, axis=ax)[1:-1, 1:-1, 1:-1]
    return mask & ~inner


def brute_hd95(pred, gt, spacing):
    """All-pairs surface distances; 95th percentile of the pooled multiset."""
    pred, gt = np.asarray(pred, bool), np.asarray(gt, bool)
    if not pred.any() and not gt.any():
        return 0.0
    if not pred.any() or not gt.any():
        return 374.0
    sp = np.asarray(spacing, np.float64)
    a = np.argwhere(surface(pred)) * sp
    b = np.argwhere(surface(gt)) * sp
    da = np.full(len(a), np.inf)
    db = np.full(len(b), np.inf)
    for s in range(0, len(a), 256):
        d = np.sqrt(((a[s : s + 256, None, :] - b[None, :, :]) ** 2).sum(-1))
        da[s : s + 256] = d.min(1)
        db = np.minimum(db, d.min(0))
    return float(np.percentile(np.concatenate([da, db]), 95))


def mednext_param_count(cfg) -> int:
    """Parameter count written out per block from the architecture description."""
    k3 = cfg.kernel_size**3

    def block(cin, cout, r, resample):
        hid = r * cin
        n = cin * k3 + cin + 2 * cin + hid * cin + hid + cout * hid + cout
        return n + (cout * cin + cout if resample else 0)

    C = [cfg.base_channels * 2**i for i in range(5)]
    B, R = cfg.blocks_per_stage, cfg.expansion_ratios
    total = C[0] * cfg.in_channels + C[0]
    for i in range(4):
        total += B[i] * block(C[i], C[i], R[i], False) + block(C[i], C[i + 1], R[i + 1], True)
    total += B[4] * block(C[4], C[4], R[4], False)
    for i in range(4):
        stage = 8 - i  # dec_i sits at index 8 - i
        total += block(C[i + 1], C[i], R[stage], True) + B[stage] * block(C[i], C[i], R[stage], False)
    total += sum(C[i] * cfg.out_channels + cfg.out_channels for i in range(cfg.deep_supervision_levels))
    return total
