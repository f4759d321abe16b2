"""Wall-following fallback steering and command arbitration.

Sign convention: body-frame y is positive to the left, positive steer
turns left. A right-side wall therefore sits at negative d_w, and the
distance-error term is flipped so that a too-distant wall is approached
and a too-close wall is backed away from, on either side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from racenav.core import ControlInput
from racenav.fusion import NavLevel, NavStatus
from racenav.perception import WallModel


@dataclass(frozen=True)
class WallFollowParams:
    d_gap: float = 4.0
    d_lookahead: float = 15.0
    w_theta: float = 0.8
    w_d: float = 0.05
    steer_limit: float = 0.3

    def __post_init__(self):
        if self.d_gap <= 0 or self.d_lookahead <= 0 or self.steer_limit <= 0:
            raise ValueError(f"bad wall-follow params: {self}")
        if not (math.isfinite(self.w_theta) and math.isfinite(self.w_d)):
            raise ValueError("non-finite wall-follow gains")


def wall_follow_command(w: WallModel, p: WallFollowParams) -> ControlInput:
    """Steer toward a fixed gap from the fitted wall.

    steer = w_theta * y_w'(lookahead) + sign(d_w) * w_d * (|d_w| - d_gap),
    clamped to the steer limit; acceleration is held at zero (the speed
    setpoint is regulated by the outer loop).
    """
    if w is None or w.support < w.coeffs.size:
        raise ValueError("invalid wall model")
    side_sign = 1.0 if w.d_w >= 0 else -1.0
    steer = p.w_theta * w.slope(p.d_lookahead) + p.w_d * side_sign * (
        abs(w.d_w) - p.d_gap
    )
    steer = max(-p.steer_limit, min(p.steer_limit, steer))
    return ControlInput(steer=steer, accel=0.0)


def arbitrate(
    status: NavStatus, u_loc: ControlInput, u_wall: ControlInput
) -> ControlInput:
    """Emergency selects the wall command, anything else the localization
    command; the switch is immediate in both directions."""
    return u_wall if status.level is NavLevel.EMERGENCY else u_loc
