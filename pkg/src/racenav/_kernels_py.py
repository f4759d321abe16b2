"""Pure-Python (numpy) fallback for the clustering kernel.

Implements exactly the same algorithm as the compiled extension: a
uniform grid with cell size = tol, candidate pairs drawn from the 27
neighboring cells, exact squared-distance tests, union-find. The
resulting partition is identical to the compiled backend's.
"""

from __future__ import annotations

import numpy as np


def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]  # path halving
        i = parent[i]
    return i


def connected_labels(points, tol):
    """Single-linkage connected-component labels at linking distance tol.

    points: (n, 3) float array. Returns int64 labels, canonicalized so
    that label values appear in order of first occurrence.
    """
    pts = np.ascontiguousarray(points, dtype=float)
    n = pts.shape[0]
    labels = np.empty(n, dtype=np.int64)
    if n == 0:
        return labels
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")

    cells = np.floor(pts / tol).astype(np.int64)
    buckets = {}
    for i in range(n):
        buckets.setdefault((cells[i, 0], cells[i, 1], cells[i, 2]), []).append(i)

    parent = list(range(n))
    tol2 = tol * tol
    for i in range(n):
        cx, cy, cz = cells[i, 0], cells[i, 1], cells[i, 2]
        xi, yi, zi = pts[i]
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    bucket = buckets.get((cx + dx, cy + dy, cz + dz))
                    if bucket is None:
                        continue
                    for j in bucket:
                        if j <= i:
                            continue
                        ddx = pts[j, 0] - xi
                        ddy = pts[j, 1] - yi
                        ddz = pts[j, 2] - zi
                        if ddx * ddx + ddy * ddy + ddz * ddz <= tol2:
                            ri, rj = _find(parent, i), _find(parent, j)
                            if ri != rj:
                                parent[rj] = ri

    # Canonical labels in order of first occurrence.
    remap = {}
    for i in range(n):
        r = _find(parent, i)
        if r not in remap:
            remap[r] = len(remap)
        labels[i] = remap[r]
    return labels
