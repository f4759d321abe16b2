"""Fallback steering law and command arbitration."""

import numpy as np
import pytest

from racenav.core import ControlInput
from racenav.fusion import NavLevel, NavStatus
from racenav.perception import WallModel
from racenav.wallfollow import WallFollowParams, arbitrate, wall_follow_command


def wall(c0, c1=0.0, c2=0.0, side="left"):
    return WallModel(
        coeffs=np.array([c0, c1, c2]), d_w=c0, support=50, side=side
    )


class TestWallFollowCommand:
    def test_equilibrium(self):
        p = WallFollowParams(d_gap=2.0)
        u = wall_follow_command(wall(2.0), p)
        assert u.steer == pytest.approx(0.0)
        assert u.accel == 0.0

    def test_distance_term_arithmetic(self):
        p = WallFollowParams(d_gap=2.0, w_d=0.1, w_theta=1.0)
        u = wall_follow_command(wall(3.0), p)
        assert u.steer == pytest.approx(0.1)

    def test_slope_term_arithmetic(self):
        p = WallFollowParams(d_gap=2.0, d_lookahead=10.0, w_theta=0.5, w_d=0.1)
        u = wall_follow_command(wall(2.0, c1=0.05), p)
        assert u.steer == pytest.approx(0.025)

    def test_right_wall_sign_flip(self):
        # right wall (negative d_w) farther than the gap: steer right
        p = WallFollowParams(d_gap=4.0, w_d=0.05, w_theta=0.8)
        u = wall_follow_command(wall(-6.0, side="right"), p)
        assert u.steer == pytest.approx(-0.1)
        # closer than the gap: steer away (left)
        u = wall_follow_command(wall(-2.0, side="right"), p)
        assert u.steer == pytest.approx(0.1)

    def test_saturation(self):
        p = WallFollowParams(steer_limit=0.3)
        u = wall_follow_command(wall(100.0), p)
        assert u.steer == 0.3
        u = wall_follow_command(wall(-100.0, side="right"), p)
        assert u.steer == -0.3

    def test_bounded_for_wild_models(self):
        p = WallFollowParams()
        rng = np.random.default_rng(0)
        for _ in range(100):
            c = rng.uniform(-50, 50, 3)
            m = WallModel(coeffs=c, d_w=c[0], support=10, side="left")
            u = wall_follow_command(m, p)
            assert abs(u.steer) <= p.steer_limit

    def test_invalid_model_raises(self):
        thin = WallModel(
            coeffs=np.array([1.0, 0.0, 0.0]), d_w=1.0, support=2, side="left"
        )
        with pytest.raises(ValueError):
            wall_follow_command(thin, WallFollowParams())
        with pytest.raises(ValueError):
            wall_follow_command(None, WallFollowParams())

    def test_param_validation(self):
        with pytest.raises(ValueError):
            WallFollowParams(d_gap=-1.0)
        with pytest.raises(ValueError):
            WallFollowParams(w_d=float("nan"))


class TestArbitrate:
    U_LOC = ControlInput(0.1, 1.0)
    U_WALL = ControlInput(-0.2, 0.0)

    def test_nominal_uses_localization(self):
        got = arbitrate(NavStatus(NavLevel.NOMINAL), self.U_LOC, self.U_WALL)
        assert got is self.U_LOC

    def test_warning_uses_localization(self):
        got = arbitrate(NavStatus(NavLevel.WARNING), self.U_LOC, self.U_WALL)
        assert got is self.U_LOC

    def test_emergency_uses_wall(self):
        got = arbitrate(NavStatus(NavLevel.EMERGENCY), self.U_LOC, self.U_WALL)
        assert got is self.U_WALL
