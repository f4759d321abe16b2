"""Multi-measurement Kalman filter with Bayesian update selection.

Predicts on control input, gates each GPS fix by its Mahalanobis
distance against the innovation covariance, and selects single /
weighted / rejected updates. A small hysteresis state machine turns
sustained rejections into a Warning/Emergency navigation status that
arms the wall-following fallback.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from racenav import core
from racenav.core import (
    ControlInput,
    FilterModel,
    VehicleState,
    check_covariance,
    solve_spd,
)


@dataclass(frozen=True)
class Measurement:
    source_id: int
    z: np.ndarray  # (2,) position fix, meters
    r: np.ndarray  # (2, 2) measurement-noise covariance
    timestamp: float

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.shape != (2,) or not np.all(np.isfinite(z)):
            raise ValueError(f"bad measurement vector: {self.z!r}")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "r", check_covariance(self.r, name="R"))
        if not math.isfinite(self.timestamp):
            raise ValueError("non-finite measurement timestamp")


@dataclass(frozen=True)
class GateParams:
    epsilon: float = 0.2
    delta: float = 5.0

    def __post_init__(self):
        if not (0.0 < self.epsilon < self.delta):
            raise ValueError(
                f"GateParams requires 0 < epsilon < delta, got "
                f"epsilon={self.epsilon}, delta={self.delta}"
            )


class GateKind(enum.Enum):
    ALL_QUALIFIED = "all_qualified"
    WEIGHTED_FUSE = "weighted_fuse"
    SINGLE_FEASIBLE = "single_feasible"
    REJECT = "reject"


@dataclass(frozen=True)
class GateDecision:
    kind: GateKind
    distances: np.ndarray
    chosen: int | None = None  # ALL_QUALIFIED / SINGLE_FEASIBLE
    weights: np.ndarray | None = None  # WEIGHTED_FUSE, full-length, sums to 1

    @property
    def accepted(self):
        return self.kind is not GateKind.REJECT


class NavLevel(enum.Enum):
    NOMINAL = "nominal"
    WARNING = "warning"
    EMERGENCY = "emergency"


@dataclass(frozen=True)
class NavStatus:
    level: NavLevel = NavLevel.NOMINAL
    consecutive_rejects: int = 0
    consecutive_accepts: int = 0


@dataclass(frozen=True)
class StatusThresholds:
    warn: int = 1
    emergency: int = 3
    recover: int = 5

    def __post_init__(self):
        if not (1 <= self.warn <= self.emergency) or self.recover < 1:
            raise ValueError(f"bad status thresholds: {self}")


@dataclass(frozen=True)
class FilterState:
    estimate: VehicleState
    cov: np.ndarray
    model: FilterModel
    gate: GateParams = field(default_factory=GateParams)
    status: NavStatus = field(default_factory=NavStatus)
    thresholds: StatusThresholds = field(default_factory=StatusThresholds)

    def __post_init__(self):
        object.__setattr__(self, "cov", check_covariance(self.cov, name="P"))


def predict(fs: FilterState, u: ControlInput, dt: float) -> FilterState:
    """Propagate estimate and covariance through the process model."""
    if not (math.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    x = fs.estimate.to_vector()
    f = core.bicycle_jacobian(x, u, dt, fs.model.wheelbase)
    x_new = core.bicycle_step(x, u, dt, fs.model.wheelbase)
    p_new = core.symmetrize(f @ fs.cov @ f.T + fs.model.q_rate * dt)
    top = max(p_new[0, 0], p_new[1, 1])
    if top > fs.model.pos_var_cap:
        p_new = p_new * (fs.model.pos_var_cap / top)
    est = VehicleState.from_vector(x_new, fs.estimate.timestamp + dt)
    return replace(fs, estimate=est, cov=p_new)


def mahalanobis(fs: FilterState, m: Measurement) -> float:
    """Gating statistic: sqrt of the innovation quadratic form, in meters.

    Raises SpdSolveError when the innovation covariance is singular; the
    caller treats that source as rejected.
    """
    h = fs.model.h
    s = core.symmetrize(h @ fs.cov @ h.T + m.r)
    innov = m.z - h @ fs.estimate.to_vector()
    q = float(innov @ solve_spd(s, innov))
    return math.sqrt(max(q, 0.0))


def gate(distances, p: GateParams) -> GateDecision:
    """Four-way update selection from per-source gating distances.

    (i) all within epsilon -> use source 0; (ii) a plural subset within
    delta -> distance-weighted fusion of that subset; (iii) exactly one
    within delta -> that source alone; (iv) none within delta -> reject.
    """
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise ValueError("gate requires at least one distance")
    if np.any(d < 0) or np.any(np.isnan(d)):
        raise ValueError(f"gating distances must be >= 0, got {d}")

    feasible = d <= p.delta
    if not feasible.any():
        return GateDecision(GateKind.REJECT, distances=d)
    if feasible.all() and bool((d <= p.epsilon).all()):
        return GateDecision(GateKind.ALL_QUALIFIED, distances=d, chosen=0)
    idx = np.flatnonzero(feasible)
    if idx.size == 1:
        return GateDecision(
            GateKind.SINGLE_FEASIBLE, distances=d, chosen=int(idx[0])
        )
    sub = d[idx]
    total = sub.sum()
    if total == 0.0:
        w_sub = np.full(idx.size, 1.0 / idx.size)
    else:
        raw = 1.0 - sub / total
        w_sub = raw / raw.sum()
    weights = np.zeros(d.size)
    weights[idx] = w_sub
    return GateDecision(GateKind.WEIGHTED_FUSE, distances=d, weights=weights)


def step_status(
    s: NavStatus, d: GateDecision, cfg: StatusThresholds
) -> NavStatus:
    """Hysteresis state machine driven by gate outcomes.

    Nominal never jumps straight to Emergency; leaving Emergency needs a
    run of consecutive accepts.
    """
    if d.accepted:
        rejects, accepts = 0, s.consecutive_accepts + 1
    else:
        rejects, accepts = s.consecutive_rejects + 1, 0

    if s.level is NavLevel.EMERGENCY:
        level = NavLevel.NOMINAL if accepts >= cfg.recover else NavLevel.EMERGENCY
    elif s.level is NavLevel.WARNING:
        if rejects >= cfg.emergency:
            level = NavLevel.EMERGENCY
        elif rejects == 0:
            level = NavLevel.NOMINAL
        else:
            level = NavLevel.WARNING
    else:
        level = NavLevel.WARNING if rejects >= cfg.warn else NavLevel.NOMINAL
    return NavStatus(level, rejects, accepts)


def _correct(fs: FilterState, z, r):
    """Standard Kalman correction (Joseph form) with a position fix."""
    h = fs.model.h
    x = fs.estimate.to_vector()
    s = core.symmetrize(h @ fs.cov @ h.T + r)
    gain = solve_spd(s, h @ fs.cov).T  # K = P H^T S^-1
    x_new = x + gain @ (z - h @ x)
    ikh = np.eye(core.STATE_DIM) - gain @ h
    p_new = core.symmetrize(ikh @ fs.cov @ ikh.T + gain @ r @ gain.T)
    est = VehicleState.from_vector(x_new, fs.estimate.timestamp)
    return replace(fs, estimate=est, cov=p_new)


def update(
    fs: FilterState, ms: list[Measurement], d: GateDecision
) -> FilterState:
    """Apply the selected correction and advance the navigation status."""
    if len(ms) != d.distances.size:
        raise ValueError(
            f"decision covers {d.distances.size} sources, got {len(ms)} "
            "measurements"
        )
    status = step_status(fs.status, d, fs.thresholds)
    if d.kind is GateKind.REJECT:
        return replace(fs, status=status)

    if d.kind is GateKind.WEIGHTED_FUSE:
        lam = d.weights
        z = sum(w * m.z for w, m in zip(lam, ms))
        r = sum(w * w * m.r for w, m in zip(lam, ms))
    else:
        m = ms[d.chosen]
        z, r = m.z, m.r
    out = _correct(fs, z, r)
    return replace(out, status=status)
