"""LiDAR wall-detection pipeline.

Voxel downsample -> planar grid z-voting ground removal -> Euclidean
clustering -> wall-cluster selection -> polynomial wall regression. All
clouds are (n, 3) body-frame arrays; the pipeline is deterministic for a
given cloud and parameter set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from racenav import kernels
from racenav.core import solve_spd


class PerceptionError(ValueError):
    pass


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (n, 3) float64, body frame
    stamp: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite points")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


def save_cloud(cloud: PointCloud, path):
    """Write the `x y z` text fixture format."""
    with open(path, "w") as f:
        f.write("# x y z (meters, body frame)\n")
        for x, y, z in cloud.points:
            f.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def load_cloud(path, stamp=0.0) -> PointCloud:
    pts = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise PerceptionError(
                    f"{path}:{lineno}: expected 'x y z', got {line!r}"
                )
            pts.append([float(v) for v in parts])
    return PointCloud(np.array(pts).reshape(-1, 3), stamp=stamp)


@dataclass(frozen=True)
class CellVote:
    count: int
    point_indices: np.ndarray


@dataclass(frozen=True)
class VoteGrid:
    cell_size: float
    cells: dict  # (u, v) -> CellVote
    n_points: int


@dataclass(frozen=True)
class Cluster:
    point_indices: np.ndarray
    centroid: np.ndarray  # (3,)
    length: float  # max pairwise xy extent


@dataclass(frozen=True)
class WallModel:
    coeffs: np.ndarray  # ascending powers, y(x) = c0 + c1 x + c2 x^2 ...
    d_w: float  # y(0), signed body-frame lateral position of the wall
    support: int
    side: str  # "left" | "right"
    residual_rms: float = 0.0

    def eval(self, x):
        return float(np.polyval(self.coeffs[::-1], x))

    def slope(self, x):
        deriv = np.polyder(np.poly1d(self.coeffs[::-1]))
        return float(deriv(x))


@dataclass(frozen=True)
class PerceptionParams:
    voxel_leaf: float = 0.1
    cell_size: float = 0.4
    min_count: int = 5
    cluster_tol: float = 1.5
    cluster_min_size: int = 10
    poly_order: int = 2
    wall_side: str = "right"
    crop_x: tuple = (-10.0, 120.0)
    crop_y_abs: float = 40.0


def crop_cloud(c: PointCloud, x_range=(-10.0, 120.0), y_abs=40.0) -> PointCloud:
    """Bound the working region before the pipeline (compute budget)."""
    p = c.points
    keep = (
        (p[:, 0] >= x_range[0])
        & (p[:, 0] <= x_range[1])
        & (np.abs(p[:, 1]) <= y_abs)
    )
    return PointCloud(p[keep], stamp=c.stamp)


def voxel_downsample(c: PointCloud, leaf: float) -> PointCloud:
    """Collapse each occupied voxel to the centroid of its members."""
    if leaf <= 0:
        raise ValueError(f"leaf must be > 0, got {leaf}")
    if len(c) == 0:
        return c
    keys = np.floor(c.points / leaf).astype(np.int64)
    _, inv, counts = np.unique(
        keys, axis=0, return_inverse=True, return_counts=True
    )
    sums = np.zeros((counts.size, 3))
    np.add.at(sums, inv, c.points)
    return PointCloud(sums / counts[:, None], stamp=c.stamp)


def grid_vote(c: PointCloud, cell: float) -> VoteGrid:
    """Project points onto the xy grid and count votes per cell."""
    if cell <= 0:
        raise ValueError(f"cell must be > 0, got {cell}")
    cells = {}
    if len(c) > 0:
        uv = np.floor(c.points[:, :2] / cell).astype(np.int64)
        order = np.lexsort((uv[:, 1], uv[:, 0]))
        uv_sorted = uv[order]
        splits = np.flatnonzero(np.any(np.diff(uv_sorted, axis=0), axis=1)) + 1
        for grp in np.split(order, splits):
            u, v = uv[grp[0]]
            cells[(int(u), int(v))] = CellVote(len(grp), np.sort(grp))
    return VoteGrid(cell_size=cell, cells=cells, n_points=len(c))


def vertical_mask(c: PointCloud, g: VoteGrid, min_count: int) -> np.ndarray:
    """Boolean mask of points living in cells with >= min_count votes."""
    if g.n_points != len(c):
        raise PerceptionError(
            f"grid built from {g.n_points} points, cloud has {len(c)}"
        )
    mask = np.zeros(len(c), dtype=bool)
    for vote in g.cells.values():
        if vote.count >= min_count:
            mask[vote.point_indices] = True
    return mask


def filter_ground(c: PointCloud, g: VoteGrid, min_count: int):
    """Split the cloud into (ground, vertical) by per-cell vote count."""
    mask = vertical_mask(c, g, min_count)
    ground = PointCloud(c.points[~mask], stamp=c.stamp)
    vertical = PointCloud(c.points[mask], stamp=c.stamp)
    return ground, vertical


def _cluster_length(xy):
    if xy.shape[0] < 2:
        return 0.0
    return float(pdist(xy).max())


def cluster(c: PointCloud, tol: float, min_size: int) -> list[Cluster]:
    """Exact single-linkage Euclidean clustering.

    Two points share a cluster iff they are connected by hops of length
    <= tol; clusters below min_size are dropped. Label order follows
    first point occurrence, which makes the result deterministic.
    """
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if len(c) == 0:
        return []
    labels = kernels.connected_labels(c.points, tol)
    out = []
    for lab in range(int(labels.max()) + 1):
        idx = np.flatnonzero(labels == lab)
        if idx.size < min_size:
            continue
        member = c.points[idx]
        out.append(
            Cluster(
                point_indices=idx,
                centroid=member.mean(axis=0),
                length=_cluster_length(member[:, :2]),
            )
        )
    return out


def select_wall(cs: list[Cluster], side: str) -> Cluster:
    """Pick the longest cluster on the requested side of the vehicle.

    Ties resolve to the lowest cluster index so repeated runs agree.
    """
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    sign = 1.0 if side == "left" else -1.0
    candidates = [cl for cl in cs if sign * cl.centroid[1] > 0.0]
    if not candidates:
        raise PerceptionError(f"no cluster on {side} side")
    best = candidates[0]
    for cl in candidates[1:]:
        if cl.length > best.length:
            best = cl
    return best


def fit_wall(w: Cluster, c: PointCloud, order: int = 2) -> WallModel:
    """Least-squares polynomial y(x) over the wall cluster, via the
    normal equations; z is projected out.
    """
    pts = c.points[w.point_indices]
    if pts.shape[0] < order + 1:
        raise PerceptionError(
            f"wall support {pts.shape[0]} < order+1 ({order + 1})"
        )
    x, y = pts[:, 0], pts[:, 1]
    if np.unique(x).size < order + 1:
        raise PerceptionError("degenerate wall cluster: too few distinct x")
    design = np.vander(x, order + 1, increasing=True)
    coeffs = solve_spd(design.T @ design, design.T @ y)
    resid = design @ coeffs - y
    rms = float(np.sqrt(np.mean(resid**2)))
    d_w = float(coeffs[0])
    side = "left" if d_w >= 0 else "right"
    return WallModel(
        coeffs=coeffs,
        d_w=d_w,
        support=pts.shape[0],
        side=side,
        residual_rms=rms,
    )


def detect_wall(c: PointCloud, params: PerceptionParams) -> WallModel | None:
    """Full pipeline. Returns None when no wall can be extracted."""
    c = crop_cloud(c, params.crop_x, params.crop_y_abs)
    c = voxel_downsample(c, params.voxel_leaf) if len(c) else c
    if len(c) == 0:
        return None
    grid = grid_vote(c, params.cell_size)
    _, vertical = filter_ground(c, grid, params.min_count)
    if len(vertical) == 0:
        return None
    clusters = cluster(vertical, params.cluster_tol, params.cluster_min_size)
    try:
        wall = select_wall(clusters, params.wall_side)
        return fit_wall(wall, vertical, params.poly_order)
    except PerceptionError:
        return None
