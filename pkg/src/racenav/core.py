"""Shared domain types, frames, and small linear-algebra utilities.

All angles are radians, all lengths meters, all times seconds. Vehicle
states live in a track-local ENU frame; LiDAR points live in the vehicle
body frame (origin at the rear-axle center, x forward, y left).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

TWO_PI = 2.0 * math.pi

# Filter state layout: (x, y, yaw, speed, yaw_rate)
STATE_DIM = 5


class SpdSolveError(ValueError):
    """Raised when a matrix expected to be SPD is singular or indefinite."""

    def __init__(self, msg, cond=None):
        super().__init__(msg)
        self.cond = cond


def normalize_angle(a):
    """Wrap an angle into (-pi, pi]."""
    a = float(a)
    if not math.isfinite(a):
        raise ValueError(f"non-finite angle: {a!r}")
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def symmetrize(m):
    """Return the symmetric part of a square matrix."""
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def check_covariance(m, tol=1e-9, name="covariance"):
    """Validate a covariance matrix: square, symmetric, PSD within tol.

    Returns the symmetrized matrix.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    if not np.allclose(m, m.T, atol=tol, rtol=0.0):
        raise ValueError(f"{name} not symmetric within {tol}")
    s = symmetrize(m)
    w = np.linalg.eigvalsh(s)
    if w.min() < -tol:
        raise ValueError(f"{name} not PSD: min eigenvalue {w.min():.3e}")
    return s


def solve_spd(a, b):
    """Solve A x = b for SPD A via Cholesky.

    Raises SpdSolveError (with a condition-number diagnostic) when A is
    singular or indefinite.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    try:
        factor = scipy.linalg.cho_factor(a, lower=True)
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError, ValueError) as exc:
        cond = float(np.linalg.cond(a)) if np.all(np.isfinite(a)) else math.inf
        raise SpdSolveError(f"matrix not SPD (cond={cond:.3e}): {exc}", cond=cond)
    return scipy.linalg.cho_solve(factor, b)


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("non-finite pose position")
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2D
    speed: float
    yaw_rate: float
    timestamp: float

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError(f"negative speed: {self.speed}")
        for v in (self.speed, self.yaw_rate, self.timestamp):
            if not math.isfinite(v):
                raise ValueError("non-finite vehicle state field")

    def to_vector(self):
        p = self.pose
        return np.array([p.x, p.y, p.yaw, self.speed, self.yaw_rate])

    @staticmethod
    def from_vector(v, timestamp):
        v = np.asarray(v, dtype=float)
        return VehicleState(
            pose=Pose2D(v[0], v[1], normalize_angle(v[2])),
            speed=max(float(v[3]), 0.0),
            yaw_rate=float(v[4]),
            timestamp=float(timestamp),
        )


@dataclass(frozen=True)
class ControlInput:
    steer: float
    accel: float

    def __post_init__(self):
        if not (math.isfinite(self.steer) and math.isfinite(self.accel)):
            raise ValueError("non-finite control input")


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float


def bicycle_step(state_vec, u: ControlInput, dt, wheelbase):
    """Kinematic bicycle step on a (x, y, yaw, speed, yaw_rate) vector.

    Shared by the simulator truth model and the filter prediction so that
    dead reckoning with known controls is exact.
    """
    x, y, yaw, v, _ = (float(c) for c in state_vec)
    yr = v * math.tan(u.steer) / wheelbase
    return np.array(
        [
            x + v * math.cos(yaw) * dt,
            y + v * math.sin(yaw) * dt,
            normalize_angle(yaw + yr * dt),
            max(v + u.accel * dt, 0.0),
            yr,
        ]
    )


def bicycle_jacobian(state_vec, u: ControlInput, dt, wheelbase):
    """Jacobian of bicycle_step with respect to the state vector."""
    _, _, yaw, v, _ = (float(c) for c in state_vec)
    t = math.tan(u.steer) / wheelbase
    f = np.eye(STATE_DIM)
    f[0, 2] = -v * math.sin(yaw) * dt
    f[0, 3] = math.cos(yaw) * dt
    f[1, 2] = v * math.cos(yaw) * dt
    f[1, 3] = math.sin(yaw) * dt
    f[2, 3] = t * dt
    f[4, 3] = t
    f[4, 4] = 0.0
    return f


def default_h():
    """Measurement matrix for a GPS position fix: picks (x, y)."""
    h = np.zeros((2, STATE_DIM))
    h[0, 0] = 1.0
    h[1, 1] = 1.0
    return h


@dataclass(frozen=True)
class FilterModel:
    """Process/measurement model for the fusion filter.

    The transition matrix is state dependent (the yaw kinematics are
    nonlinear), so it is produced by bicycle_jacobian rather than stored;
    q_rate is a continuous-time noise rate, scaled by dt at predict time.
    """

    wheelbase: float = 3.048
    q_rate: np.ndarray = field(
        default_factory=lambda: np.diag([0.05, 0.05, 1e-4, 0.1, 1e-4])
    )
    h: np.ndarray = field(default_factory=default_h)
    # Ceiling on the position variances during open-loop propagation.
    # Without it a long stretch of rejected measurements inflates P until
    # even a grossly biased fix looks statistically plausible and recaptures
    # the filter.
    pos_var_cap: float = 9.0
    r_by_source: tuple = (
        np.diag([0.25, 0.25]),
        np.diag([0.25, 0.25]),
    )

    def __post_init__(self):
        check_covariance(self.q_rate, name="Q")
        for r in self.r_by_source:
            check_covariance(r, name="R")
        if self.h.shape != (2, STATE_DIM):
            raise ValueError(f"H must be 2x{STATE_DIM}, got {self.h.shape}")
        if not (math.isfinite(self.pos_var_cap) and self.pos_var_cap > 0):
            raise ValueError(
                f"pos_var_cap must be positive and finite, got {self.pos_var_cap}"
            )
