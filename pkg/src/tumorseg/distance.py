"""Exact squared Euclidean distance transform (Felzenszwalb & Huttenlocher).

The 3D transform is three 1D lower-envelope-of-parabolas passes, one per
axis, with the axis spacing folded into the parabola positions so that
anisotropic voxels give distances in mm.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _envelope_1d(f, spacing, out, v, z):
    """Lower envelope of parabolas y = f[q] + (spacing * (p - q))**2.

    ``f`` may hold +inf for "no site"; those are skipped. ``v`` and ``z``
    are scratch buffers of length n and n + 1.
    """
    n = f.shape[0]
    k = -1
    for q in range(n):
        if f[q] == np.inf:
            continue
        uq = spacing * q
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        while True:
            vk = v[k]
            uv = spacing * vk
            s = ((f[q] + uq * uq) - (f[vk] + uv * uv)) / (2.0 * (uq - uv))
            if s <= z[k]:
                k -= 1
                if k < 0:
                    break
            else:
                break
        k += 1
        v[k] = q
        z[k] = -np.inf if k == 0 else s
        z[k + 1] = np.inf
    if k < 0:
        for p in range(n):
            out[p] = np.inf
        return
    j = 0
    for p in range(n):
        up = spacing * p
        while z[j + 1] < up:
            j += 1
        d = spacing * (p - v[j])
        out[p] = f[v[j]] + d * d


@njit(cache=True)
def _transform_lines(lines, spacing):
    m, n = lines.shape
    out = np.empty_like(lines)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    for i in range(m):
        _envelope_1d(lines[i], spacing, out[i], v, z)
    return out


def edt_squared(features: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Squared mm distance from every voxel to the nearest ``True`` voxel.

    Returns +inf everywhere when there is no feature voxel.
    """
    features = np.asarray(features, dtype=bool)
    f = np.where(features, 0.0, np.inf)
    for axis in range(f.ndim):
        moved = np.moveaxis(f, axis, -1)
        shape = moved.shape
        lines = np.ascontiguousarray(moved).reshape(-1, shape[-1])
        res = _transform_lines(lines, float(spacing[axis])).reshape(shape)
        f = np.moveaxis(res, -1, axis)
    return np.ascontiguousarray(f)
