# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled clustering kernel: grid-bucketed single-linkage union-find.

Semantically identical to racenav._kernels_py; kept small on purpose so
the two backends stay trivially comparable.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline Py_ssize_t _find(long long[::1] parent, Py_ssize_t i) nogil:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def connected_labels(points, double tol):
    """Single-linkage connected-component labels at linking distance tol."""
    cdef cnp.ndarray[double, ndim=2, mode="c"] pts = np.ascontiguousarray(
        points, dtype=np.float64
    )
    cdef Py_ssize_t n = pts.shape[0]
    out = np.empty(n, dtype=np.int64)
    cdef long long[::1] labels = out
    if n == 0:
        return out
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")

    cdef cnp.ndarray[long long, ndim=2, mode="c"] cells = np.floor(
        pts / tol
    ).astype(np.int64)

    buckets = {}
    cdef Py_ssize_t i, j, k
    for i in range(n):
        key = (cells[i, 0], cells[i, 1], cells[i, 2])
        lst = buckets.get(key)
        if lst is None:
            buckets[key] = [i]
        else:
            lst.append(i)

    cdef cnp.ndarray[long long, ndim=1, mode="c"] parent_arr = np.arange(
        n, dtype=np.int64
    )
    cdef long long[::1] parent = parent_arr
    cdef double tol2 = tol * tol
    cdef double xi, yi, zi, dx, dy, dz
    cdef long long cx, cy, cz
    cdef int ox, oy, oz
    cdef Py_ssize_t ri, rj

    for i in range(n):
        cx = cells[i, 0]
        cy = cells[i, 1]
        cz = cells[i, 2]
        xi = pts[i, 0]
        yi = pts[i, 1]
        zi = pts[i, 2]
        for ox in range(-1, 2):
            for oy in range(-1, 2):
                for oz in range(-1, 2):
                    bucket = buckets.get((cx + ox, cy + oy, cz + oz))
                    if bucket is None:
                        continue
                    for k in range(len(bucket)):
                        j = bucket[k]
                        if j <= i:
                            continue
                        dx = pts[j, 0] - xi
                        dy = pts[j, 1] - yi
                        dz = pts[j, 2] - zi
                        if dx * dx + dy * dy + dz * dz <= tol2:
                            ri = _find(parent, i)
                            rj = _find(parent, j)
                            if ri != rj:
                                parent[rj] = ri

    remap = {}
    cdef Py_ssize_t r
    for i in range(n):
        r = _find(parent, i)
        val = remap.get(r)
        if val is None:
            val = len(remap)
            remap[r] = val
        labels[i] = val
    return out
