"""Numeric utilities: angle normalization, SPD solves, bicycle kinematics."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from racenav import core
from racenav.core import (
    ControlInput,
    FilterModel,
    Pose2D,
    SpdSolveError,
    VehicleState,
    bicycle_jacobian,
    bicycle_step,
    check_covariance,
    normalize_angle,
    solve_spd,
    symmetrize,
)


class TestNormalizeAngle:
    def test_zero(self):
        assert normalize_angle(0.0) == 0.0

    def test_three_pi(self):
        assert normalize_angle(3 * math.pi) == pytest.approx(math.pi)

    def test_minus_pi_maps_to_plus_pi(self):
        # half-open interval (-pi, pi]
        assert normalize_angle(-math.pi) == pytest.approx(math.pi)

    @given(st.floats(min_value=-1e6, max_value=1e6))
    def test_idempotent(self, a):
        once = normalize_angle(a)
        assert normalize_angle(once) == pytest.approx(once, abs=1e-12)
        assert -math.pi < once <= math.pi


class TestSolveSpd:
    def test_identity(self):
        x = solve_spd(np.eye(2), np.array([3.0, 4.0]))
        np.testing.assert_allclose(x, [3.0, 4.0])

    def test_diagonal(self):
        x = solve_spd(np.diag([2.0, 4.0]), np.array([2.0, 4.0]))
        np.testing.assert_allclose(x, [1.0, 1.0])

    def test_residual_oracle_random_spd(self):
        # residual check over many random SPD systems, dims 2-6
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(2, 7))
            m = rng.standard_normal((n, n))
            a = m @ m.T + n * np.eye(n)
            b = rng.standard_normal(n)
            x = solve_spd(a, b)
            assert np.linalg.norm(a @ x - b) <= 1e-9 * max(np.linalg.norm(b), 1.0)

    def test_singular_raises(self):
        with pytest.raises(SpdSolveError):
            solve_spd(np.zeros((2, 2)), np.ones(2))


class TestCovarianceHelpers:
    def test_symmetrize_preserves_eigenvalues(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((4, 4))
        spd = a @ a.T + 4 * np.eye(4)
        skewed = spd + 1e-12 * rng.standard_normal((4, 4))
        sym = symmetrize(skewed)
        np.testing.assert_allclose(
            np.sort(np.linalg.eigvalsh(sym)),
            np.sort(np.linalg.eigvalsh(spd)),
            atol=1e-9,
        )

    def test_check_covariance_rejects_negative(self):
        with pytest.raises(ValueError):
            check_covariance(np.diag([1.0, -1.0]))

    def test_check_covariance_rejects_nonsquare(self):
        with pytest.raises(ValueError):
            check_covariance(np.ones((2, 3)))


class TestBicycleStep:
    def test_straight_line(self):
        x = np.array([0.0, 0.0, 0.0, 50.0, 0.0])
        out = bicycle_step(x, ControlInput(0.0, 0.0), 0.1, 3.048)
        assert out[0] == pytest.approx(5.0)
        assert out[1] == pytest.approx(0.0)

    def test_circle_closure(self):
        # constant steer traces a circle of radius wheelbase / tan(steer);
        # after one revolution at dt=0.01 the pose should nearly close.
        wheelbase, steer, v, dt = 3.048, 0.05, 10.0, 0.01
        radius = wheelbase / math.tan(steer)
        period = 2 * math.pi * radius / v
        x = np.array([0.0, 0.0, 0.0, v, 0.0])
        u = ControlInput(steer, 0.0)
        n = int(round(period / dt))
        for _ in range(n):
            x = bicycle_step(x, u, dt, wheelbase)
        closure = math.hypot(x[0], x[1])
        assert closure < 0.005 * (2 * math.pi * radius)

    def test_speed_never_negative(self):
        x = np.array([0.0, 0.0, 0.0, 1.0, 0.0])
        out = bicycle_step(x, ControlInput(0.0, -100.0), 0.1, 3.048)
        assert out[3] == 0.0

    def test_jacobian_matches_finite_differences(self):
        x = np.array([3.0, -2.0, 0.7, 25.0, 0.1])
        u = ControlInput(0.02, 0.5)
        dt, wheelbase = 0.01, 3.048
        f = bicycle_jacobian(x, u, dt, wheelbase)
        eps = 1e-6
        num = np.zeros_like(f)
        for j in range(len(x)):
            dx = np.zeros_like(x)
            dx[j] = eps
            plus = bicycle_step(x + dx, u, dt, wheelbase)
            minus = bicycle_step(x - dx, u, dt, wheelbase)
            num[:, j] = (plus - minus) / (2 * eps)
        np.testing.assert_allclose(f, num, atol=1e-6)


class TestModelTypes:
    def test_vehicle_state_roundtrip(self):
        s = VehicleState(Pose2D(1.0, 2.0, 0.3), 20.0, 0.1, 5.0)
        assert VehicleState.from_vector(s.to_vector(), 5.0) == s

    def test_filter_model_validates_h_shape(self):
        with pytest.raises(ValueError):
            FilterModel(h=np.eye(3))

    def test_filter_model_validates_cap(self):
        with pytest.raises(ValueError):
            FilterModel(pos_var_cap=-1.0)

    def test_filter_model_validates_q(self):
        with pytest.raises(ValueError):
            FilterModel(q_rate=np.diag([1.0, -1.0, 0.0, 0.0, 0.0]))
