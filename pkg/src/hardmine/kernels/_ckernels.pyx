# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the scan kernels in ``_pykernels``.

Both functions must stay bit-compatible with the Python fallback: distances
are accumulated coordinate by coordinate in index order, and the build
disables floating-point contraction.
"""

import numpy as np

from libc.math cimport INFINITY


def nearest_scan(const double[:, ::1] points, const long long[::1] ids,
                 const double[::1] query, const unsigned char[::1] excluded):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t dim = points.shape[1]
    cdef Py_ssize_t i, j
    cdef Py_ssize_t best = -1
    cdef double best_dist = INFINITY
    cdef long long best_id = 0
    cdef double dist, diff
    if query.shape[0] != dim or ids.shape[0] != n or excluded.shape[0] != n:
        raise ValueError("nearest_scan: inconsistent array shapes")
    for i in range(n):
        if excluded[i]:
            continue
        diff = points[i, 0] - query[0] if dim > 0 else 0.0
        dist = diff * diff
        for j in range(1, dim):
            diff = points[i, j] - query[j]
            dist = dist + diff * diff
        if best < 0 or dist < best_dist or (dist == best_dist and ids[i] < best_id):
            best = i
            best_dist = dist
            best_id = ids[i]
    return best


cdef void _envelope_1d(double* f, Py_ssize_t n, Py_ssize_t stride, double* out,
                       Py_ssize_t* v, double* z) noexcept nogil:
    # lower envelope of parabolas (q - v)^2 + f[v]; sites with f = inf are skipped
    cdef Py_ssize_t k = -1, q
    cdef double s, fq, fv
    for q in range(n):
        fq = f[q * stride]
        if fq == INFINITY:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -INFINITY
            z[1] = INFINITY
            continue
        fv = f[v[k] * stride]
        s = ((fq + <double>(q * q)) - (fv + <double>(v[k] * v[k]))) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            fv = f[v[k] * stride]
            s = ((fq + <double>(q * q)) - (fv + <double>(v[k] * v[k]))) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = INFINITY
    if k < 0:
        for q in range(n):
            out[q] = INFINITY
        return
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        out[q] = <double>((q - v[k]) * (q - v[k])) + f[v[k] * stride]


def edt_squared(const unsigned char[:, ::1] foreground):
    """Squared Euclidean distance from each pixel to the nearest background pixel.

    Pixels outside the image count as background.
    """
    cdef Py_ssize_t h = foreground.shape[0]
    cdef Py_ssize_t w = foreground.shape[1]
    cdef Py_ssize_t ph = h + 2, pw = w + 2
    cdef Py_ssize_t i, j
    grid_np = np.zeros((ph, pw), dtype=np.float64)
    cols_np = np.empty((ph, pw), dtype=np.float64)
    cdef double[:, ::1] grid = grid_np
    cdef double[:, ::1] cols = cols_np
    cdef Py_ssize_t m = ph if ph > pw else pw
    v_np = np.empty(m, dtype=np.intp)
    z_np = np.empty(m + 1, dtype=np.float64)
    tmp_np = np.empty(m, dtype=np.float64)
    cdef Py_ssize_t[::1] v = v_np
    cdef double[::1] z = z_np
    cdef double[::1] tmp = tmp_np
    for i in range(h):
        for j in range(w):
            if foreground[i, j]:
                grid[i + 1, j + 1] = INFINITY
    with nogil:
        for j in range(pw):
            _envelope_1d(&grid[0, j], ph, pw, &tmp[0], &v[0], &z[0])
            for i in range(ph):
                cols[i, j] = tmp[i]
        for i in range(ph):
            _envelope_1d(&cols[i, 0], pw, 1, &tmp[0], &v[0], &z[0])
            for j in range(pw):
                grid[i, j] = tmp[j]
    return grid_np[1:h + 1, 1:w + 1].copy()
