"""Pure-Python versions of the scan kernels (fallback when the extension is absent)."""

import math

import numpy as np


def nearest_scan(points: np.ndarray, ids: np.ndarray, query: np.ndarray, excluded: np.ndarray) -> int:
    """Row index of the closest non-excluded point, ties to the lowest id; -1 if none."""
    n, dim = points.shape
    if query.shape[0] != dim or ids.shape[0] != n or excluded.shape[0] != n:
        raise ValueError("nearest_scan: inconsistent array shapes")
    if n == 0:
        return -1
    # accumulate per coordinate in index order (matches the compiled kernel bit for bit)
    dist = np.zeros(n)
    for j in range(dim):
        diff = points[:, j] - query[j]
        dist = dist + diff * diff
    candidates = np.flatnonzero(excluded == 0)
    if candidates.size == 0:
        return -1
    cand_dist = dist[candidates]
    tied = candidates[cand_dist == cand_dist.min()]
    return int(tied[np.argmin(ids[tied])])


def _envelope_1d(f: list[float]) -> list[float]:
    n = len(f)
    v = [0] * n
    z = [0.0] * (n + 1)
    k = -1
    for q in range(n):
        fq = f[q]
        if fq == math.inf:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -math.inf
            z[1] = math.inf
            continue
        s = ((fq + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = ((fq + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = math.inf
    if k < 0:
        return [math.inf] * n
    out = [0.0] * n
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        out[q] = float((q - v[k]) * (q - v[k])) + f[v[k]]
    return out


def edt_squared(foreground: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from each pixel to the nearest background pixel.

    Separable lower-envelope transform; pixels outside the image count as background.
    """
    h, w = foreground.shape
    grid = np.zeros((h + 2, w + 2))
    grid[1:h + 1, 1:w + 1][foreground.astype(bool)] = math.inf
    for j in range(w + 2):
        grid[:, j] = _envelope_1d(grid[:, j].tolist())
    for i in range(h + 2):
        grid[i, :] = _envelope_1d(grid[i, :].tolist())
    return grid[1:h + 1, 1:w + 1].copy()
