"""Frenet-lattice road graph and obstacle-avoidance search.

The graph is built once, offline, along a racing line: layers at fixed
stations, nodes at fixed lateral offsets, each node carrying the
discrete curvature of its displaced path and its offset magnitude.
Online planning is layered dynamic programming over the DAG, minimizing
travel distance plus a per-node heuristic cost (obstacle proximity,
curvature, racing-line offset) under a hard clearance constraint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from racenav.core import Pose2D, normalize_angle


class PlannerError(ValueError):
    pass


class NoFeasiblePath(PlannerError):
    pass


@dataclass(frozen=True)
class RacingLine:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray  # arc length, strictly increasing
    heading: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "s", "heading", "kappa"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
        n = self.x.size
        if any(getattr(self, f).size != n for f in ("y", "s", "heading", "kappa")):
            raise ValueError("racing line arrays must have equal length")
        if n < 2:
            raise ValueError("racing line needs at least 2 samples")
        if np.any(np.diff(self.s) <= 0):
            raise ValueError("racing line stations must be strictly increasing")

    @property
    def length(self):
        return float(self.s[-1])

    @property
    def closed(self):
        return (
            math.hypot(self.x[-1] - self.x[0], self.y[-1] - self.y[0]) < 1e-6
        )


def save_racing_line(line: RacingLine, path):
    with open(path, "w") as f:
        f.write("# x y s heading kappa\n")
        for row in zip(line.x, line.y, line.s, line.heading, line.kappa):
            f.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_racing_line(path) -> RacingLine:
    rows = []
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            raw = raw.split("#", 1)[0].strip()
            if not raw:
                continue
            parts = raw.split()
            if len(parts) != 5:
                raise PlannerError(
                    f"{path}:{lineno}: expected 'x y s heading kappa'"
                )
            rows.append([float(v) for v in parts])
    arr = np.array(rows)
    return RacingLine(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4])


def check_racing_line(line: RacingLine, tol=0.05):
    """Finite-difference consistency check of heading/kappa against xy."""
    dx = np.diff(line.x)
    dy = np.diff(line.y)
    seg_heading = np.arctan2(dy, dx)
    mid_heading = 0.5 * (line.heading[:-1] + line.heading[1:])
    err = np.abs([normalize_angle(a - b) for a, b in zip(seg_heading, mid_heading)])
    if err.max() > max(tol, tol * np.abs(line.heading).max()):
        raise PlannerError(f"heading inconsistent with xy: max err {err.max():.4f}")


@dataclass(frozen=True)
class Obstacle:
    center: np.ndarray  # (2,)
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(2)
        object.__setattr__(self, "center", c)
        if not (self.radius > 0):
            raise ValueError(f"obstacle radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class CostWeights:
    k_c: float = 5.0
    k_kappa: float = 50.0
    k_d: float = 1.0

    def __post_init__(self):
        if self.k_c < 0 or self.k_kappa < 0 or self.k_d < 0:
            raise ValueError(f"cost weights must be >= 0: {self}")


@dataclass(frozen=True)
class SafetyParams:
    margin: float = 1.5  # vehicle half-width 1.0 m + 0.5 m buffer
    cutoff: float = 15.0  # proximity-penalty influence radius
    soften: float = 0.1
    edge_sample_step: float = 1.0


@dataclass(frozen=True)
class RoadGraph:
    stations: np.ndarray  # (m,)
    offsets: np.ndarray  # (k,) ascending, meters (positive = left)
    xs: np.ndarray  # (m, k)
    ys: np.ndarray
    headings: np.ndarray
    kappas: np.ndarray
    half_width: float
    max_jump: int = 1
    closed: bool = False

    @property
    def n_layers(self):
        return self.stations.size

    @property
    def n_offsets(self):
        return self.offsets.size

    def node_xy(self, layer, idx):
        return self.xs[layer, idx], self.ys[layer, idx]

    def offset_distance(self, idx):
        return abs(float(self.offsets[idx]))


def _interp_station(line: RacingLine, s):
    x = np.interp(s, line.s, line.x)
    y = np.interp(s, line.s, line.y)
    unwrapped = np.unwrap(line.heading)
    h = np.interp(s, line.s, unwrapped)
    return x, y, h


def build_road_graph(
    line: RacingLine,
    half_width: float,
    lateral_offsets,
    station_step: float,
    max_jump: int = 1,
) -> RoadGraph:
    """Lattice construction: racing-line samples displaced along the left
    normal at each station; per-column discrete curvature."""
    offsets = np.sort(np.asarray(lateral_offsets, dtype=float))
    if station_step <= 0:
        raise ValueError(f"station_step must be > 0, got {station_step}")
    if np.abs(offsets).max() > half_width:
        raise PlannerError(
            f"offset {np.abs(offsets).max()} exceeds half width {half_width}"
        )
    closed = line.closed
    end = line.length if not closed else line.length - 1e-9
    stations = np.arange(0.0, end + (0.0 if closed else 1e-9), station_step)
    cx, cy, ch = _interp_station(line, stations)
    m, k = stations.size, offsets.size
    xs = cx[:, None] - np.sin(ch)[:, None] * offsets[None, :]
    ys = cy[:, None] + np.cos(ch)[:, None] * offsets[None, :]

    headings = np.zeros((m, k))
    kappas = np.zeros((m, k))
    for i in range(k):
        headings[:, i], kappas[:, i] = _discrete_heading_kappa(
            xs[:, i], ys[:, i], closed
        )
    return RoadGraph(
        stations=stations,
        offsets=offsets,
        xs=xs,
        ys=ys,
        headings=headings,
        kappas=kappas,
        half_width=half_width,
        max_jump=max_jump,
        closed=closed,
    )


def _discrete_heading_kappa(x, y, closed):
    """Heading and curvature of a polyline by finite differences."""
    m = x.size
    if closed:
        xp = np.concatenate(([x[-1]], x, [x[0]]))
        yp = np.concatenate(([y[-1]], y, [y[0]]))
    else:
        xp = np.concatenate(([2 * x[0] - x[1]], x, [2 * x[-1] - x[-2]]))
        yp = np.concatenate(([2 * y[0] - y[1]], y, [2 * y[-1] - y[-2]]))
    seg_h = np.arctan2(np.diff(yp), np.diff(xp))  # m+1 segments
    seg_len = np.hypot(np.diff(xp), np.diff(yp))
    heading = np.empty(m)
    kappa = np.empty(m)
    for j in range(m):
        h0, h1 = seg_h[j], seg_h[j + 1]
        dh = normalize_angle(h1 - h0)
        heading[j] = normalize_angle(h0 + 0.5 * dh)
        ds = 0.5 * (seg_len[j] + seg_len[j + 1])
        kappa[j] = dh / ds if ds > 0 else 0.0
    return heading, kappa


def export_graph(g: RoadGraph, path):
    """Debug dump: one node per line `layer offset_index x y kappa d`."""
    with open(path, "w") as f:
        f.write("# layer offset_index x y kappa d\n")
        for j in range(g.n_layers):
            for i in range(g.n_offsets):
                f.write(
                    f"{j} {i} {g.xs[j, i]!r} {g.ys[j, i]!r} "
                    f"{g.kappas[j, i]!r} {g.offset_distance(i)!r}\n"
                )


def _surface_distance(x, y, obstacles):
    if not obstacles:
        return math.inf
    return min(
        math.hypot(x - o.center[0], y - o.center[1]) - o.radius
        for o in obstacles
    )


def node_cost(
    g: RoadGraph,
    layer: int,
    idx: int,
    obstacles,
    w: CostWeights,
    safety: SafetyParams = SafetyParams(),
) -> float:
    """Heuristic node cost: bounded obstacle-proximity penalty plus
    curvature and racing-line-offset terms; infinite inside the hard
    clearance margin."""
    x, y = g.node_xy(layer, idx)
    surf = _surface_distance(x, y, obstacles)
    if surf < safety.margin:
        return math.inf
    prox = max(0.0, 1.0 / (surf + safety.soften) - 1.0 / safety.cutoff)
    return (
        w.k_c * prox
        + w.k_kappa * abs(float(g.kappas[layer, idx]))
        + w.k_d * g.offset_distance(idx)
    )


def edge_clear(g, layer_a, ia, layer_b, ib, obstacles, safety):
    """Hard clearance check on samples along the edge segment."""
    if not obstacles:
        return True
    x0, y0 = g.node_xy(layer_a, ia)
    x1, y1 = g.node_xy(layer_b, ib)
    length = math.hypot(x1 - x0, y1 - y0)
    n = max(int(math.ceil(length / safety.edge_sample_step)), 1)
    for t in np.linspace(0.0, 1.0, n + 1):
        if _surface_distance(
            x0 + t * (x1 - x0), y0 + t * (y1 - y0), obstacles
        ) < safety.margin:
            return False
    return True


@dataclass(frozen=True)
class PlannedPath:
    layer_indices: tuple
    offset_indices: tuple
    xy: np.ndarray  # (n, 2)
    offsets: tuple  # lateral offsets, meters
    total_cost: float


def plan(
    g: RoadGraph,
    start,
    obstacles,
    w: CostWeights,
    horizon: int = 15,
    safety: SafetyParams = SafetyParams(),
) -> PlannedPath:
    """Layered DP minimizing edge length + node cost over the lattice.

    start is (layer, offset_index). Ties break toward smaller total
    |offset|, then the lexicographically smaller offset-index sequence.
    Raises NoFeasiblePath when every node of some layer is blocked.
    """
    start_layer, start_idx = start
    if not (0 <= start_layer < g.n_layers and 0 <= start_idx < g.n_offsets):
        raise PlannerError(f"start node {start} outside graph")
    if g.closed:
        steps = min(horizon, g.n_layers)
        layers = [(start_layer + j) % g.n_layers for j in range(steps)]
    else:
        steps = min(horizon, g.n_layers - start_layer)
        layers = [start_layer + j for j in range(steps)]
    if len(layers) < 2:
        raise PlannerError("plan horizon must cover at least 2 layers")

    obstacles = list(obstacles)
    c0 = node_cost(g, layers[0], start_idx, obstacles, w, safety)
    if math.isinf(c0):
        raise NoFeasiblePath("start node is inside the clearance margin")
    # best[idx] = (cost, sum |offset|, offset-index sequence)
    best = {start_idx: (c0, g.offset_distance(start_idx), (start_idx,))}

    for prev_layer, layer in zip(layers[:-1], layers[1:]):
        nxt = {}
        for ib in range(g.n_offsets):
            cb = node_cost(g, layer, ib, obstacles, w, safety)
            if math.isinf(cb):
                continue
            xb, yb = g.node_xy(layer, ib)
            for ia, (cost_a, off_a, seq_a) in best.items():
                if abs(ia - ib) > g.max_jump:
                    continue
                if not edge_clear(g, prev_layer, ia, layer, ib, obstacles, safety):
                    continue
                xa, ya = g.node_xy(prev_layer, ia)
                cand = (
                    cost_a + math.hypot(xb - xa, yb - ya) + cb,
                    off_a + g.offset_distance(ib),
                    seq_a + (ib,),
                )
                if ib not in nxt or cand < nxt[ib]:
                    nxt[ib] = cand
        if not nxt:
            raise NoFeasiblePath(
                f"no reachable node in layer {layer} clears obstacles"
            )
        best = nxt

    final = min(best.values())
    cost, _, seq = final
    xy = np.array([g.node_xy(j, i) for j, i in zip(layers, seq)])
    return PlannedPath(
        layer_indices=tuple(layers),
        offset_indices=seq,
        xy=xy,
        offsets=tuple(float(g.offsets[i]) for i in seq),
        total_cost=cost,
    )


def sample_path(p: PlannedPath, spacing: float) -> list[Pose2D]:
    """Piecewise-linear resampling of the node sequence; headings follow
    segment directions."""
    if spacing <= 0:
        raise ValueError(f"spacing must be > 0, got {spacing}")
    if p.xy.shape[0] < 2:
        raise PlannerError("cannot sample an empty or single-node path")
    seg = np.diff(p.xy, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate(([0.0], np.cumsum(seg_len)))
    total = cum[-1]
    out = []
    for d in np.arange(0.0, total + 1e-9, spacing):
        d = min(d, total)
        j = min(int(np.searchsorted(cum, d, side="right")) - 1, seg_len.size - 1)
        t = (d - cum[j]) / seg_len[j] if seg_len[j] > 0 else 0.0
        x = p.xy[j, 0] + t * seg[j, 0]
        y = p.xy[j, 1] + t * seg[j, 1]
        out.append(Pose2D(x, y, math.atan2(seg[j, 1], seg[j, 0])))
    return out
