import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctrcac.rigid_body import (
    RigidBodyState,
    SingularityError,
    VehicleParams,
    WrenchCommand,
    dynamics_derivative,
    euler_from_rotation,
    euler_rate_map,
    integrate_plant,
    orthonormalize,
    rotation_from_euler,
    skew,
)

angles = st.tuples(
    st.floats(-3.0, 3.0), st.floats(-1.5, 1.5), st.floats(-3.0, 3.0),
)


def test_vehicle_defaults_and_validation():
    p = VehicleParams()
    assert p.m == 1.56
    np.testing.assert_array_equal(p.J, np.diag([0.03, 0.03, 0.05]))
    assert p.hover_thrust == pytest.approx(-15.3036)
    with pytest.raises(ValueError):
        VehicleParams(m=-1.0)
    with pytest.raises(ValueError):
        VehicleParams(J=np.diag([1.0, -1.0, 1.0]))


def test_skew_matches_cross():
    a, b = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.1, -4.0])
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b))


def test_yaw_rotation_matches_elementary_matrix():
    c, s = math.cos(0.4), math.sin(0.4)
    np.testing.assert_allclose(rotation_from_euler([0, 0, 0.4]), [[c, -s, 0], [s, c, 0], [0, 0, 1]], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(angles)
def test_euler_round_trip(e):
    O = rotation_from_euler(e)
    np.testing.assert_allclose(O.T @ O, np.eye(3), atol=1e-12)
    assert np.linalg.det(O) == pytest.approx(1.0)
    np.testing.assert_allclose(euler_from_rotation(O), e, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(angles, st.tuples(*[st.floats(-2, 2)] * 3))
def test_euler_rates_match_kinematics(e, w):
    # the rate map must agree with a finite difference of dO/dt = O skew(w)
    e, w = np.array(e), np.array(w)
    O = rotation_from_euler(e)
    h = 1e-6
    Op = orthonormalize(O @ (np.eye(3) + h * skew(w)))
    Om = orthonormalize(O @ (np.eye(3) - h * skew(w)))
    fd = (euler_from_rotation(Op) - euler_from_rotation(Om)) / (2 * h)
    fd = (fd + np.pi / h) % (2 * np.pi / h) - np.pi / h
    np.testing.assert_allclose(euler_rate_map(e, w), fd, atol=1e-5 * (1 + np.abs(fd).max()))


def test_gimbal_lock_raises():
    with pytest.raises(SingularityError):
        euler_rate_map([0.0, math.pi / 2, 0.0], [0.0, 0.0, 0.0])
    with pytest.raises(SingularityError):
        euler_from_rotation(rotation_from_euler([0.0, math.pi / 2, 0.0]))


def test_hover_is_equilibrium():
    p = VehicleParams()
    r_dot, v_dot, O_dot, w_dot = dynamics_derivative(RigidBodyState.at_rest(), WrenchCommand(p.hover_thrust, np.zeros(3)), p)
    for d in (r_dot, v_dot, O_dot, w_dot):
        np.testing.assert_allclose(d, 0.0, atol=1e-14)


def test_zero_wrench_is_free_fall_along_e3():
    p = VehicleParams()
    _, v_dot, _, _ = dynamics_derivative(RigidBodyState.at_rest(), WrenchCommand(0.0, np.zeros(3)), p)
    np.testing.assert_allclose(v_dot, [0.0, 0.0, 9.81])


def test_tilted_thrust_direction():
    # pitch up by theta: thrust -mg along body e3 pushes toward -e1
    p = VehicleParams()
    s = RigidBodyState(np.zeros(3), np.zeros(3), rotation_from_euler([0, 0.1, 0]), np.zeros(3))
    _, v_dot, _, _ = dynamics_derivative(s, WrenchCommand(p.hover_thrust, np.zeros(3)), p)
    assert v_dot[0] == pytest.approx(-9.81 * math.sin(0.1))


def test_non_finite_input_rejected():
    p = VehicleParams()
    with pytest.raises(ValueError):
        dynamics_derivative(RigidBodyState.at_rest(), WrenchCommand(float("nan"), np.zeros(3)), p)


def test_angular_momentum_conserved_torque_free():
    p = VehicleParams()
    s0 = RigidBodyState(np.zeros(3), np.zeros(3), rotation_from_euler([0.2, -0.3, 1.0]), np.array([1.0, -2.0, 3.0]))
    s1 = integrate_plant(s0, WrenchCommand(0.0, np.zeros(3)), p, 1e-3, 10_000)
    L0 = s0.O @ p.J @ s0.omega
    L1 = s1.O @ p.J @ s1.omega
    assert np.linalg.norm(L1 - L0) / np.linalg.norm(L0) < 1e-6


def test_orthonormality_after_renormalization():
    p = VehicleParams()
    s0 = RigidBodyState(np.zeros(3), np.zeros(3), np.eye(3), np.array([4.0, -1.0, 2.0]))
    s1 = integrate_plant(s0, WrenchCommand(-10.0, np.array([0.01, 0.02, -0.01])), p, 1e-3, 5000)
    assert np.abs(s1.O.T @ s1.O - np.eye(3)).max() < 1e-10


def test_plant_rk4_fourth_order():
    p = VehicleParams()
    s0 = RigidBodyState(np.zeros(3), np.array([0.1, 0, 0]), rotation_from_euler([0.1, 0.2, 0.3]), np.array([1.0, -0.5, 2.0]))
    u = WrenchCommand(-14.0, np.array([0.001, -0.002, 0.0005]))
    finals = [integrate_plant(s0, u, p, 0.04 / 2**k, 250 * 2**k, renormalize=False).as_vector() for k in range(3)]
    ratio = np.linalg.norm(finals[0] - finals[1]) / np.linalg.norm(finals[1] - finals[2])
    assert 8 < ratio < 24
