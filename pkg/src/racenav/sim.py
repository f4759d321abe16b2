"""Deterministic closed-loop simulator.

Oval track with walls, kinematic bicycle vehicle, dual synthetic GPS
with scripted fault injection, synthetic LiDAR scans of the walls, and a
scenario runner wiring fusion -> perception -> planner -> arbitration ->
vehicle. A (scenario, seed) pair yields a bit-identical trace.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from racenav import core, fusion, perception, planner, wallfollow
from racenav.core import ControlInput, Pose2D, VehicleState
from racenav.fusion import (
    FilterState,
    GateDecision,
    GateKind,
    GateParams,
    Measurement,
    NavLevel,
    StatusThresholds,
)
from racenav.perception import PerceptionParams, PointCloud
from racenav.planner import CostWeights, Obstacle, RacingLine, SafetyParams


class ScenarioError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Track


@dataclass(frozen=True)
class Track:
    centerline: RacingLine
    half_width: float
    inner_wall: np.ndarray  # (n, 2), left of travel direction
    outer_wall: np.ndarray  # (n, 2), right of travel direction
    bank_angle: float


def build_oval_track(
    straight_len, turn_radius, half_width, bank=0.0, sample_step=2.0
) -> Track:
    """Stadium oval: two straights joined by semicircular turns, traversed
    counter-clockwise; curvature is exactly 0 / 1/turn_radius piecewise."""
    if straight_len <= 0 or turn_radius <= 0 or half_width <= 0:
        raise ValueError("track dimensions must be positive")
    ls, r = float(straight_len), float(turn_radius)
    total = 2.0 * ls + 2.0 * math.pi * r
    n = int(math.ceil(total / sample_step))
    s = np.linspace(0.0, total, n + 1)  # closed: last sample == first

    x = np.empty_like(s)
    y = np.empty_like(s)
    heading = np.empty_like(s)
    kappa = np.empty_like(s)
    for i, si in enumerate(s):
        si = min(si, total)
        if si < ls:  # bottom straight, heading +x
            x[i], y[i], heading[i], kappa[i] = si, 0.0, 0.0, 0.0
        elif si < ls + math.pi * r:  # right turn (CCW semicircle)
            phi = -0.5 * math.pi + (si - ls) / r
            x[i] = ls + r * math.cos(phi)
            y[i] = r + r * math.sin(phi)
            heading[i] = core.normalize_angle(phi + 0.5 * math.pi)
            kappa[i] = 1.0 / r
        elif si < 2.0 * ls + math.pi * r:  # top straight, heading -x
            x[i] = ls - (si - ls - math.pi * r)
            y[i] = 2.0 * r
            heading[i] = math.pi
            kappa[i] = 0.0
        else:  # left turn
            phi = 0.5 * math.pi + (si - 2.0 * ls - math.pi * r) / r
            x[i] = r * math.cos(phi)
            y[i] = r + r * math.sin(phi)
            heading[i] = core.normalize_angle(phi + 0.5 * math.pi)
            kappa[i] = 1.0 / r
    x[-1], y[-1] = x[0], y[0]

    line = RacingLine(x=x, y=y, s=s, heading=heading, kappa=kappa)
    nx, ny = -np.sin(heading), np.cos(heading)  # left normal
    inner = np.column_stack([x + half_width * nx, y + half_width * ny])
    outer = np.column_stack([x - half_width * nx, y - half_width * ny])
    return Track(
        centerline=line,
        half_width=float(half_width),
        inner_wall=inner,
        outer_wall=outer,
        bank_angle=float(bank),
    )


def step_vehicle(s: VehicleState, u: ControlInput, dt, wheelbase) -> VehicleState:
    """Kinematic bicycle integration (explicit Euler)."""
    if not (math.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    vec = core.bicycle_step(s.to_vector(), u, dt, wheelbase)
    return VehicleState.from_vector(vec, s.timestamp + dt)


class CenterlineLocator:
    """Station / signed lateral offset of a world point on the centerline."""

    def __init__(self, line: RacingLine):
        self._x = line.x
        self._y = line.y
        self._s = line.s
        self._h = line.heading

    def locate(self, px, py):
        d2 = (self._x - px) ** 2 + (self._y - py) ** 2
        i = int(np.argmin(d2))
        h = self._h[i]
        dx, dy = px - self._x[i], py - self._y[i]
        along = math.cos(h) * dx + math.sin(h) * dy
        lateral = -math.sin(h) * dx + math.cos(h) * dy
        return float(self._s[i] + along), float(lateral)


# ---------------------------------------------------------------------------
# Sensor fault injection


FAULT_MODES = ("bias", "noise_inflation", "dropout", "random_walk")


@dataclass(frozen=True)
class FaultEpisode:
    t_start: float
    t_end: float
    mode: str
    bias: tuple = (0.0, 0.0)
    factor: float = 1.0
    sigma: float = 0.0  # random-walk strength, m/sqrt(s)

    def __post_init__(self):
        object.__setattr__(self, "bias", tuple(float(b) for b in self.bias))
        if self.mode not in FAULT_MODES:
            raise ScenarioError(f"unknown fault mode {self.mode!r}")
        if not self.t_start < self.t_end:
            raise ScenarioError(
                f"fault episode needs t_start < t_end, got "
                f"[{self.t_start}, {self.t_end}]"
            )

    def active(self, t):
        return self.t_start <= t < self.t_end


@dataclass(frozen=True)
class FaultProfile:
    episodes_by_source: tuple = ((), ())

    def __post_init__(self):
        for k, eps in enumerate(self.episodes_by_source):
            ordered = sorted(eps, key=lambda e: e.t_start)
            for a, b in zip(ordered, ordered[1:]):
                if b.t_start < a.t_end:
                    raise ScenarioError(
                        f"overlapping fault episodes on source {k}: "
                        f"[{a.t_start},{a.t_end}] and [{b.t_start},{b.t_end}]"
                    )

    def episode(self, source, t):
        for ep in self.episodes_by_source[source]:
            if ep.active(t):
                return ep
        return None

    @property
    def n_sources(self):
        return len(self.episodes_by_source)


class GpsSimulator:
    """Per-source GPS sampling with fault injection.

    Returned measurements always report the nominal R; faults are
    unmodeled errors, which is what the gate is there to catch.
    """

    def __init__(self, profile: FaultProfile, r_nominal, rng, sample_dt):
        self.profile = profile
        self.r_nominal = [np.asarray(r, dtype=float) for r in r_nominal]
        self.rng = rng
        self.sample_dt = float(sample_dt)
        self._walk = [np.zeros(2) for _ in r_nominal]

    def sample(self, truth: VehicleState, t) -> list[Measurement]:
        out = []
        for k, r in enumerate(self.r_nominal):
            std = np.sqrt(np.diag(r))
            noise = self.rng.standard_normal(2) * std
            ep = self.profile.episode(k, t)
            if ep is None:
                self._walk[k] = np.zeros(2)
            elif ep.mode == "dropout":
                continue
            elif ep.mode == "bias":
                noise = noise + np.asarray(ep.bias, dtype=float)
            elif ep.mode == "noise_inflation":
                noise = noise * ep.factor
            elif ep.mode == "random_walk":
                self._walk[k] = self._walk[k] + self.rng.standard_normal(
                    2
                ) * ep.sigma * math.sqrt(self.sample_dt)
                noise = noise + self._walk[k]
            z = np.array([truth.pose.x, truth.pose.y]) + noise
            out.append(Measurement(source_id=k, z=z, r=r, timestamp=t))
        return out


def synth_gps(truth, profile, t, rng, r_nominal=None, sample_dt=0.05):
    """One-shot convenience wrapper around GpsSimulator."""
    if r_nominal is None:
        r_nominal = [np.diag([0.25, 0.25])] * profile.n_sources
    return GpsSimulator(profile, r_nominal, rng, sample_dt).sample(truth, t)


# ---------------------------------------------------------------------------
# Synthetic LiDAR


def _wall_segments(track: Track):
    segs = []
    for wall in (track.inner_wall, track.outer_wall):
        segs.append(np.stack([wall[:-1], wall[1:]], axis=1))
    return np.concatenate(segs, axis=0)  # (S, 2, 2)


def synth_lidar(
    truth: VehicleState,
    track: Track,
    fov=2.0 * math.pi,
    ray_count=360,
    max_range=40.0,
    rng=None,
    wall_height=1.0,
    wall_layers=5,
    range_noise=0.03,
    ground_step=2.0,
) -> PointCloud:
    """2.5-D raycast against the wall polylines.

    Each wall hit yields a short vertical column of points; a sparse grid
    of banked-ground points is added underneath. All points are in the
    body frame.
    """
    if ray_count < 1:
        raise ValueError(f"ray_count must be >= 1, got {ray_count}")
    rng = rng if rng is not None else np.random.default_rng(0)
    pos = np.array([truth.pose.x, truth.pose.y])
    yaw = truth.pose.yaw
    pts = []

    if max_range > 0:
        segs = _wall_segments(track)
        mid = segs.mean(axis=1)
        near = np.hypot(mid[:, 0] - pos[0], mid[:, 1] - pos[1]) <= max_range + 5.0
        segs = segs[near]
        if segs.shape[0] > 0:
            body_angles = np.linspace(-math.pi, math.pi, ray_count, endpoint=False)
            body_angles = body_angles[np.abs(body_angles) <= fov / 2.0 + 1e-12]
            world_angles = yaw + body_angles
            d = np.column_stack([np.cos(world_angles), np.sin(world_angles)])
            p0 = segs[:, 0, :]
            e = segs[:, 1, :] - segs[:, 0, :]
            rel = p0 - pos  # (S, 2)
            denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
            with np.errstate(divide="ignore", invalid="ignore"):
                t_hit = (rel[None, :, 0] * e[None, :, 1] - rel[None, :, 1] * e[None, :, 0]) / denom
                u_hit = (rel[None, :, 0] * d[:, None, 1] - rel[None, :, 1] * d[:, None, 0]) / (-denom)
            valid = (
                (np.abs(denom) > 1e-12)
                & (t_hit > 1e-6)
                & (t_hit <= max_range)
                & (u_hit >= 0.0)
                & (u_hit <= 1.0)
            )
            t_hit = np.where(valid, t_hit, np.inf)
            rng_min = t_hit.min(axis=1)
            hit = np.isfinite(rng_min)
            ranges = rng_min[hit] + rng.standard_normal(int(hit.sum())) * range_noise
            ang = body_angles[hit]
            hx = ranges * np.cos(ang)
            hy = ranges * np.sin(ang)
            zs = np.linspace(
                wall_height / wall_layers, wall_height, wall_layers
            )
            for z in zs:
                pts.append(np.column_stack([hx, hy, np.full_like(hx, z)]))

        # Sparse banked-ground grid, spacing kept above the vote cell size
        # so ground cells stay under the vote threshold.
        gx = np.arange(0.0, min(50.0, max_range), ground_step)
        gy = np.arange(-20.0, 20.0 + 1e-9, ground_step)
        gxx, gyy = np.meshgrid(gx, gy)
        gxx, gyy = gxx.ravel(), gyy.ravel()
        gz = np.tan(track.bank_angle) * np.abs(gyy)
        gz = gz + rng.standard_normal(gz.size) * 0.01
        pts.append(np.column_stack([gxx, gyy, gz]))

    if not pts:
        return PointCloud(np.empty((0, 3)), stamp=truth.timestamp)
    return PointCloud(np.concatenate(pts, axis=0), stamp=truth.timestamp)


def make_banked_scene(
    bank=math.radians(9.0),
    wall_y=-7.5,
    wall_height=1.0,
    wall_layers=10,
    wall_step=0.2,
    x_range=(0.0, 60.0),
    ground_y=(-7.0, 15.0),  # ground stops short of the wall (occlusion)
    ground_step=0.5,
    noise=0.01,
    seed=0,
):
    """Labeled synthetic scene: banked ground plane plus a vertical wall.

    Returns (cloud, labels) with labels 0 = ground, 1 = wall. Used by the
    perception partition-quality checks.
    """
    rng = np.random.default_rng(seed)
    gx = np.arange(x_range[0], x_range[1], ground_step)
    gy = np.arange(ground_y[0], ground_y[1], ground_step)
    gxx, gyy = np.meshgrid(gx, gy)
    gxx, gyy = gxx.ravel(), gyy.ravel()
    gz = np.tan(bank) * (gyy - ground_y[0])
    ground = np.column_stack([gxx, gyy, gz])

    wx = np.arange(x_range[0], x_range[1], wall_step)
    wz = np.linspace(wall_height / wall_layers, wall_height, wall_layers)
    wxx, wzz = np.meshgrid(wx, wz)
    wall = np.column_stack(
        [wxx.ravel(), np.full(wxx.size, wall_y), wzz.ravel()]
    )
    pts = np.concatenate([ground, wall], axis=0)
    pts = pts + rng.standard_normal(pts.shape) * noise
    labels = np.concatenate(
        [np.zeros(ground.shape[0], dtype=int), np.ones(wall.shape[0], dtype=int)]
    )
    return PointCloud(pts), labels


# ---------------------------------------------------------------------------
# Scenario configuration


@dataclass(frozen=True)
class TrackConfig:
    straight_len: float = 600.0
    turn_radius: float = 200.0
    half_width: float = 7.5
    bank_deg: float = 9.0


@dataclass(frozen=True)
class VehicleConfig:
    x: float = 50.0
    y: float = 0.0
    yaw_deg: float = 0.0
    speed: float = 30.0
    speed_setpoint: float = 30.0
    wheelbase: float = 3.048
    steer_max: float = 0.3
    half_width: float = 1.0


@dataclass(frozen=True)
class RatesConfig:
    tick_hz: int = 100
    gps_hz: int = 20
    lidar_hz: int = 10
    replan_hz: int = 5

    def __post_init__(self):
        for name in ("gps_hz", "lidar_hz", "replan_hz"):
            hz = getattr(self, name)
            if hz <= 0 or self.tick_hz % hz != 0:
                raise ScenarioError(
                    f"{name}={hz} must divide tick_hz={self.tick_hz}"
                )


@dataclass(frozen=True)
class FusionConfig:
    epsilon: float = 0.2
    delta: float = 5.0
    gps_std: float = 0.5
    gating_enabled: bool = True
    warn_threshold: int = 1
    emergency_threshold: int = 3
    recover_threshold: int = 5
    q_pos: float = 0.05
    q_yaw: float = 1e-4
    q_speed: float = 0.1
    q_yaw_rate: float = 1e-4
    init_pos_std: float = 0.5


@dataclass(frozen=True)
class PerceptionConfig:
    lidar_fov_deg: float = 360.0
    ray_count: int = 360
    max_range: float = 40.0
    wall_height: float = 1.0
    wall_layers: int = 5
    range_noise: float = 0.03
    ground_step: float = 2.0
    voxel_leaf: float = 0.1
    cell_size: float = 0.4
    min_count: int = 5
    cluster_tol: float = 1.5
    cluster_min_size: int = 10
    poly_order: int = 2
    wall_side: str = "right"

    def pipeline_params(self) -> PerceptionParams:
        return PerceptionParams(
            voxel_leaf=self.voxel_leaf,
            cell_size=self.cell_size,
            min_count=self.min_count,
            cluster_tol=self.cluster_tol,
            cluster_min_size=self.cluster_min_size,
            poly_order=self.poly_order,
            wall_side=self.wall_side,
        )


@dataclass(frozen=True)
class WallFollowConfig:
    d_gap: float = 4.0
    d_lookahead: float = 15.0
    w_theta: float = 0.8
    w_d: float = 0.05
    steer_limit: float = 0.3
    hold_ticks: int = 50

    def params(self) -> wallfollow.WallFollowParams:
        return wallfollow.WallFollowParams(
            d_gap=self.d_gap,
            d_lookahead=self.d_lookahead,
            w_theta=self.w_theta,
            w_d=self.w_d,
            steer_limit=self.steer_limit,
        )


@dataclass(frozen=True)
class PlannerConfig:
    station_step: float = 10.0
    offsets: tuple = (-3.0, -1.5, 0.0, 1.5, 3.0)
    max_jump: int = 1
    horizon: int = 15
    k_c: float = 5.0
    k_kappa: float = 50.0
    k_d: float = 1.0
    margin: float = 1.5
    sample_spacing: float = 2.0
    lookahead: float = 20.0

    def weights(self) -> CostWeights:
        return CostWeights(k_c=self.k_c, k_kappa=self.k_kappa, k_d=self.k_d)

    def safety(self) -> SafetyParams:
        return SafetyParams(margin=self.margin)


@dataclass(frozen=True)
class Scenario:
    track: TrackConfig = field(default_factory=TrackConfig)
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    rates: RatesConfig = field(default_factory=RatesConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    wallfollow: WallFollowConfig = field(default_factory=WallFollowConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    faults: FaultProfile = field(default_factory=FaultProfile)
    obstacles: tuple = ()
    seed: int = 0
    duration_s: float = 10.0
    name: str = "scenario"


def _from_mapping(cls, data, path):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ScenarioError(
            f"unknown key(s) {sorted(unknown)} under '{path}'; "
            f"expected a subset of {sorted(names)}"
        )
    return cls(**data)


def scenario_from_dict(data: dict, name="scenario") -> Scenario:
    top = {
        "track",
        "vehicle",
        "rates",
        "fusion",
        "perception",
        "wallfollow",
        "planner",
        "faults",
        "obstacles",
        "seed",
        "duration_s",
    }
    unknown = set(data) - top
    if unknown:
        raise ScenarioError(
            f"unknown top-level key(s) {sorted(unknown)}; "
            f"expected a subset of {sorted(top)}"
        )
    try:
        faults_raw = data.get("faults", {})
        if not isinstance(faults_raw, dict):
            raise ScenarioError("'faults' must map source ids to episode lists")
        n_sources = 2
        episodes = [[], []]
        for key, eps in faults_raw.items():
            k = int(key)
            if not (0 <= k < n_sources):
                raise ScenarioError(f"fault source {k} out of range [0,{n_sources})")
            for ep in eps:
                episodes[k].append(_from_mapping(FaultEpisode, ep, f"faults.{k}"))
        obstacles = tuple(
            Obstacle(center=(o["x"], o["y"]), radius=o["radius"])
            for o in data.get("obstacles", [])
        )
        return Scenario(
            track=_from_mapping(TrackConfig, data.get("track", {}), "track"),
            vehicle=_from_mapping(VehicleConfig, data.get("vehicle", {}), "vehicle"),
            rates=_from_mapping(RatesConfig, data.get("rates", {}), "rates"),
            fusion=_from_mapping(FusionConfig, data.get("fusion", {}), "fusion"),
            perception=_from_mapping(
                PerceptionConfig, data.get("perception", {}), "perception"
            ),
            wallfollow=_from_mapping(
                WallFollowConfig, data.get("wallfollow", {}), "wallfollow"
            ),
            planner=_from_mapping(
                PlannerConfig,
                {
                    **data.get("planner", {}),
                    **(
                        {"offsets": tuple(data["planner"]["offsets"])}
                        if "offsets" in data.get("planner", {})
                        else {}
                    ),
                },
                "planner",
            ),
            faults=FaultProfile(tuple(tuple(e) for e in episodes)),
            obstacles=obstacles,
            seed=int(data.get("seed", 0)),
            duration_s=float(data.get("duration_s", 10.0)),
            name=name,
        )
    except (TypeError, KeyError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc


def scenario_to_dict(sc: Scenario) -> dict:
    faults = {}
    for k, eps in enumerate(sc.faults.episodes_by_source):
        if eps:
            faults[str(k)] = [
                {kk: (list(vv) if isinstance(vv, tuple) else vv)
                 for kk, vv in dataclasses.asdict(ep).items()}
                for ep in eps
            ]
    return {
        "track": dataclasses.asdict(sc.track),
        "vehicle": dataclasses.asdict(sc.vehicle),
        "rates": dataclasses.asdict(sc.rates),
        "fusion": dataclasses.asdict(sc.fusion),
        "perception": dataclasses.asdict(sc.perception),
        "wallfollow": dataclasses.asdict(sc.wallfollow),
        "planner": {
            **dataclasses.asdict(sc.planner),
            "offsets": list(sc.planner.offsets),
        },
        "faults": faults,
        "obstacles": [
            {"x": float(o.center[0]), "y": float(o.center[1]), "radius": o.radius}
            for o in sc.obstacles
        ],
        "seed": sc.seed,
        "duration_s": sc.duration_s,
    }


def load_scenario(path) -> Scenario:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON: {exc}") from exc
    import os

    return scenario_from_dict(data, name=os.path.splitext(os.path.basename(path))[0])


def validate_scenario(sc: Scenario):
    """Cross-field invariants beyond what the dataclasses check."""
    GateParams(sc.fusion.epsilon, sc.fusion.delta)  # epsilon < delta
    if max(abs(o) for o in sc.planner.offsets) > sc.track.half_width:
        raise ScenarioError("planner offsets exceed track half width")
    if sc.duration_s <= 0:
        raise ScenarioError("duration_s must be positive")
    if sc.vehicle.speed < 0:
        raise ScenarioError("vehicle speed must be >= 0")


# ---------------------------------------------------------------------------
# Trace


TRACE_HEADER = (
    "t,true_x,true_y,true_yaw,est_x,est_y,est_yaw,z1_x,z1_y,z2_x,z2_y,"
    "delta1,delta2,gate,status,mode,steer,d_w,path_offset"
)


@dataclass(frozen=True)
class TraceRecord:
    t: float
    true_pose: Pose2D
    est_pose: Pose2D
    z: tuple  # per-source (x, y) or None
    deltas: tuple  # per-source float or None
    gate: str  # decision variant or "" on prediction-only ticks
    status: str
    mode: str  # "racing_line" | "wall_follow"
    steer: float
    d_w: float | None
    path_offset: float | None


def _fmt(v):
    return "" if v is None else repr(float(v))


def trace_to_csv(records) -> str:
    lines = [TRACE_HEADER]
    for r in records:
        z1 = r.z[0] if len(r.z) > 0 else None
        z2 = r.z[1] if len(r.z) > 1 else None
        d1 = r.deltas[0] if len(r.deltas) > 0 else None
        d2 = r.deltas[1] if len(r.deltas) > 1 else None
        lines.append(
            ",".join(
                [
                    _fmt(r.t),
                    _fmt(r.true_pose.x),
                    _fmt(r.true_pose.y),
                    _fmt(r.true_pose.yaw),
                    _fmt(r.est_pose.x),
                    _fmt(r.est_pose.y),
                    _fmt(r.est_pose.yaw),
                    _fmt(z1[0]) if z1 is not None else "",
                    _fmt(z1[1]) if z1 is not None else "",
                    _fmt(z2[0]) if z2 is not None else "",
                    _fmt(z2[1]) if z2 is not None else "",
                    _fmt(d1),
                    _fmt(d2),
                    r.gate,
                    r.status,
                    r.mode,
                    _fmt(r.steer),
                    _fmt(r.d_w),
                    _fmt(r.path_offset),
                ]
            )
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SimResult:
    records: list
    off_track: bool
    scenario: Scenario


# ---------------------------------------------------------------------------
# Scenario runner


def _pure_pursuit(est: VehicleState, path_poses, lookahead, wheelbase):
    px, py, yaw = est.pose.x, est.pose.y, est.pose.yaw
    target = None
    for p in path_poses:
        if math.hypot(p.x - px, p.y - py) >= lookahead:
            target = p
            break
    if target is None:
        target = path_poses[-1]
    alpha = core.normalize_angle(math.atan2(target.y - py, target.x - px) - yaw)
    return math.atan2(2.0 * wheelbase * math.sin(alpha), lookahead)


def run_scenario(sc: Scenario) -> SimResult:
    """Closed-loop run; identical scenario + seed gives an identical trace."""
    validate_scenario(sc)
    rng = np.random.default_rng(sc.seed)
    dt = 1.0 / sc.rates.tick_hz
    n_ticks = int(round(sc.duration_s * sc.rates.tick_hz))
    gps_every = sc.rates.tick_hz // sc.rates.gps_hz
    lidar_every = sc.rates.tick_hz // sc.rates.lidar_hz
    replan_every = sc.rates.tick_hz // sc.rates.replan_hz

    track = build_oval_track(
        sc.track.straight_len,
        sc.track.turn_radius,
        sc.track.half_width,
        math.radians(sc.track.bank_deg),
    )
    locator = CenterlineLocator(track.centerline)
    graph = planner.build_road_graph(
        track.centerline,
        sc.track.half_width,
        sc.planner.offsets,
        sc.planner.station_step,
        max_jump=sc.planner.max_jump,
    )
    weights = sc.planner.weights()
    safety = sc.planner.safety()
    obstacles = list(sc.obstacles)

    r_nominal = np.diag([sc.fusion.gps_std**2] * 2)
    gps = GpsSimulator(
        sc.faults, [r_nominal, r_nominal], rng, sample_dt=gps_every * dt
    )

    truth = VehicleState(
        pose=Pose2D(sc.vehicle.x, sc.vehicle.y, math.radians(sc.vehicle.yaw_deg)),
        speed=sc.vehicle.speed,
        yaw_rate=0.0,
        timestamp=0.0,
    )
    model = core.FilterModel(
        wheelbase=sc.vehicle.wheelbase,
        q_rate=np.diag(
            [
                sc.fusion.q_pos,
                sc.fusion.q_pos,
                sc.fusion.q_yaw,
                sc.fusion.q_speed,
                sc.fusion.q_yaw_rate,
            ]
        ),
        r_by_source=(r_nominal, r_nominal),
    )
    p0 = np.diag(
        [sc.fusion.init_pos_std**2, sc.fusion.init_pos_std**2, 1e-4, 0.01, 1e-4]
    )
    fs = FilterState(
        estimate=truth,
        cov=p0,
        model=model,
        gate=GateParams(sc.fusion.epsilon, sc.fusion.delta),
        thresholds=StatusThresholds(
            sc.fusion.warn_threshold,
            sc.fusion.emergency_threshold,
            sc.fusion.recover_threshold,
        ),
    )
    pparams = sc.perception.pipeline_params()
    wfparams = sc.wallfollow.params()

    u_prev = ControlInput(0.0, 0.0)
    wall = None
    wall_age_ticks = 0
    last_wall_steer = 0.0
    path_poses = None
    path_offset = None
    records = []
    off_track = False

    for i in range(n_ticks):
        t = i * dt
        if i > 0:
            fs = fusion.predict(fs, u_prev, dt)

        gate_str = ""
        z_by_source = [None, None]
        delta_by_source = [None, None]
        if i % gps_every == 0:
            ms = gps.sample(truth, t)
            for m in ms:
                z_by_source[m.source_id] = (float(m.z[0]), float(m.z[1]))
            if not ms:
                decision = GateDecision(GateKind.REJECT, distances=np.array([]))
                fs = replace(
                    fs, status=fusion.step_status(fs.status, decision, fs.thresholds)
                )
                gate_str = GateKind.REJECT.value
            else:
                dists = []
                for m in ms:
                    try:
                        dists.append(fusion.mahalanobis(fs, m))
                    except core.SpdSolveError:
                        dists.append(math.inf)
                for m, dist in zip(ms, dists):
                    delta_by_source[m.source_id] = dist
                if sc.fusion.gating_enabled:
                    decision = fusion.gate(dists, fs.gate)
                else:
                    decision = GateDecision(
                        GateKind.ALL_QUALIFIED,
                        distances=np.asarray(dists, dtype=float),
                        chosen=0,
                    )
                fs = fusion.update(fs, ms, decision)
                gate_str = decision.kind.value

        if i % lidar_every == 0:
            cloud = synth_lidar(
                truth,
                track,
                fov=math.radians(sc.perception.lidar_fov_deg),
                ray_count=sc.perception.ray_count,
                max_range=sc.perception.max_range,
                rng=rng,
                wall_height=sc.perception.wall_height,
                wall_layers=sc.perception.wall_layers,
                range_noise=sc.perception.range_noise,
                ground_step=sc.perception.ground_step,
            )
            detected = perception.detect_wall(cloud, pparams)
            if detected is not None:
                wall = detected
                wall_age_ticks = 0
            else:
                wall_age_ticks += lidar_every

        if i % replan_every == 0 or path_poses is None:
            s_v, lat = locator.locate(fs.estimate.pose.x, fs.estimate.pose.y)
            start_layer = int(
                np.searchsorted(graph.stations, s_v, side="right")
            ) % graph.n_layers
            start_idx = int(np.argmin(np.abs(graph.offsets - lat)))
            try:
                p = planner.plan(
                    graph,
                    (start_layer, start_idx),
                    obstacles,
                    weights,
                    horizon=sc.planner.horizon,
                    safety=safety,
                )
                path_poses = planner.sample_path(p, sc.planner.sample_spacing)
                path_offset = p.offsets[0]
            except planner.NoFeasiblePath:
                path_poses = None
                path_offset = None

        accel = max(-5.0, min(3.0, 0.5 * (sc.vehicle.speed_setpoint - truth.speed)))
        if path_poses is not None:
            steer_loc = _pure_pursuit(
                fs.estimate, path_poses, sc.planner.lookahead, sc.vehicle.wheelbase
            )
            u_loc = ControlInput(steer=steer_loc, accel=accel)
        else:
            u_loc = ControlInput(steer=u_prev.steer, accel=-5.0)

        if wall is not None and wall_age_ticks <= sc.wallfollow.hold_ticks:
            u_wall = ControlInput(
                steer=wallfollow.wall_follow_command(wall, wfparams).steer,
                accel=accel,
            )
            last_wall_steer = u_wall.steer
        elif wall_age_ticks <= 2 * sc.wallfollow.hold_ticks:
            u_wall = ControlInput(steer=last_wall_steer, accel=accel)
        else:
            u_wall = ControlInput(steer=last_wall_steer, accel=-5.0)

        u = wallfollow.arbitrate(fs.status, u_loc, u_wall)
        steer = max(-sc.vehicle.steer_max, min(sc.vehicle.steer_max, u.steer))
        u = ControlInput(steer=steer, accel=u.accel)
        mode = (
            "wall_follow"
            if fs.status.level is NavLevel.EMERGENCY
            else "racing_line"
        )

        records.append(
            TraceRecord(
                t=t,
                true_pose=truth.pose,
                est_pose=fs.estimate.pose,
                z=tuple(z_by_source),
                deltas=tuple(delta_by_source),
                gate=gate_str,
                status=fs.status.level.value,
                mode=mode,
                steer=steer,
                d_w=wall.d_w if wall is not None else None,
                path_offset=path_offset,
            )
        )

        truth = step_vehicle(truth, u, dt, sc.vehicle.wheelbase)
        u_prev = u
        _, lat = locator.locate(truth.pose.x, truth.pose.y)
        if abs(lat) > sc.track.half_width - sc.vehicle.half_width:
            off_track = True
            break

    return SimResult(records=records, off_track=off_track, scenario=sc)


# ---------------------------------------------------------------------------
# Canned scenarios (used by tests and the acceptance command)


def nominal_scenario(duration_s=20.0, seed=7) -> Scenario:
    return Scenario(duration_s=duration_s, seed=seed, name="nominal")


def dual_outage_scenario(
    gating_enabled=True, bias=(0.0, 20.0), t_start=2.0, t_end=9.0, seed=11
) -> Scenario:
    """Mirror of the 7 s dual-GPS degradation event: identical bias fault
    on both sources while running a straight at 30 m/s."""
    ep = FaultEpisode(t_start=t_start, t_end=t_end, mode="bias", bias=tuple(bias))
    return Scenario(
        fusion=FusionConfig(gating_enabled=gating_enabled),
        faults=FaultProfile(((ep,), (ep,))),
        duration_s=t_end + 3.0,
        seed=seed,
        name="dual_gps_outage" if gating_enabled else "dual_gps_outage_ungated",
    )


def wall_regulation_scenario(gap_error=1.0, seed=3) -> Scenario:
    """Dropout on both sources from t=0 forces Emergency immediately; the
    vehicle starts offset from the wall-follow equilibrium gap."""
    wf = WallFollowConfig()
    track = TrackConfig()
    ep = FaultEpisode(t_start=0.0, t_end=60.0, mode="dropout")
    y0 = -(track.half_width - wf.d_gap - gap_error)
    return Scenario(
        track=track,
        vehicle=VehicleConfig(x=30.0, y=y0, speed=30.0, speed_setpoint=30.0),
        wallfollow=wf,
        faults=FaultProfile(((ep,), (ep,))),
        duration_s=7.0,
        seed=seed,
        name="wall_regulation",
    )


def pylon_scenario(seed=5) -> Scenario:
    """Two pylon pairs on a straight at 31 m/s: the first pair blocks an
    early lane change, the second forces one."""
    obstacles = (
        Obstacle(center=(220.0, -2.2), radius=0.2),
        Obstacle(center=(220.0, -3.8), radius=0.2),
        Obstacle(center=(300.0, 0.8), radius=0.2),
        Obstacle(center=(300.0, -0.8), radius=0.2),
    )
    return Scenario(
        vehicle=VehicleConfig(x=50.0, speed=31.0, speed_setpoint=31.0),
        obstacles=obstacles,
        duration_s=10.0,
        seed=seed,
        name="pylon_avoidance",
    )
