"""Independent reference implementations used as test oracles.

Each one is deliberately naive: exhaustive loops, no shared code with the
package beyond plain numpy.
"""

import math

import numpy as np


def brute_edt_squared(fg):
    """Squared distance from each foreground pixel to the nearest background
    pixel, with a one-pixel background ring around the image. All pairs."""
    fg = np.asarray(fg, dtype=bool)
    h, w = fg.shape
    background = [(y, x) for y in range(-1, h + 1) for x in range(-1, w + 1)
                  if not (0 <= y < h and 0 <= x < w) or not fg[y, x]]
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            if fg[y, x]:
                out[y, x] = min((y - by) ** 2 + (x - bx) ** 2 for by, bx in background)
    return out


def brute_stress_map(mask, threshold=0.5):
    fg = np.asarray(mask, dtype=np.float64) >= threshold
    if not fg.any():
        return np.zeros(fg.shape)
    d = np.sqrt(brute_edt_squared(fg))
    return d / d.max()


def brute_nearest(points, ids, query, exclude=()):
    """Exhaustive scan; ties go to the lowest id. Returns the winning id."""
    best = None
    for p, i in zip(points, ids):
        if int(i) in exclude:
            continue
        d = math.fsum((float(a) - float(b)) ** 2 for a, b in zip(p, query))
        if best is None or d < best[0] or (d == best[0] and int(i) < best[1]):
            best = (d, int(i))
    return None if best is None else best[1]


def silhouette(points, labels):
    """Mean silhouette coefficient by direct pairwise distances."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    dist = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    scores = []
    for i in range(len(points)):
        same = labels == labels[i]
        same[i] = False
        if not same.any():
            scores.append(0.0)
            continue
        a = dist[i, same].mean()
        b = min(dist[i, labels == c].mean() for c in np.unique(labels) if c != labels[i])
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))
