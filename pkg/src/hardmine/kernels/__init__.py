"""Hot scan kernels with a compiled backend and a pure-Python fallback.

The compiled extension is used when it imports; set ``HARDMINE_KERNELS=python``
to force the fallback. Both backends return identical results.
"""

import os

import numpy as np

from hardmine.kernels import _pykernels as python

try:
    from hardmine.kernels import _ckernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("HARDMINE_KERNELS", "").lower() != "python":
    _impl = compiled
    BACKEND = "cython"
else:
    _impl = python
    BACKEND = "python"


def nearest_scan(points, ids, query, excluded=None) -> int:
    points = np.ascontiguousarray(points, dtype=np.float64)
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    query = np.ascontiguousarray(query, dtype=np.float64).reshape(-1)
    if excluded is None:
        excluded = np.zeros(points.shape[0], dtype=np.uint8)
    excluded = np.ascontiguousarray(excluded, dtype=np.uint8)
    return int(_impl.nearest_scan(points, ids, query, excluded))


def edt_squared(foreground) -> np.ndarray:
    fg = np.ascontiguousarray(foreground, dtype=np.uint8)
    if fg.ndim != 2:
        raise ValueError(f"edt_squared expects a 2-D mask, got shape {fg.shape}")
    return _impl.edt_squared(fg)


__all__ = ["BACKEND", "compiled", "python", "nearest_scan", "edt_squared"]
