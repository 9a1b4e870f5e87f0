import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctrcac.autopilot import (
    AttitudeSetpoint,
    AxisControllerState,
    AxisGains,
    attitude_extraction,
    inner_loop,
    measured_attitude,
    outer_loop,
    p_pi_axis,
)
from ctrcac.rigid_body import RigidBodyState, SingularityError, rotation_from_euler

MG = 1.56 * 9.81
E3 = np.array([0.0, 0.0, 1.0])


def states(n=3):
    return [AxisControllerState() for _ in range(n)]


def test_zero_gains_give_zero_control():
    out = p_pi_axis(1.0, -3.0, 2.0, AxisGains(), AxisControllerState(4.0))
    assert out.u == 0.0


def test_altitude_gain_example():
    out = p_pi_axis(1.0, 0.0, 0.0, AxisGains(0.6114, 0.4296, 0.1753), AxisControllerState())
    assert out.e_v == pytest.approx(0.6114)
    assert out.u == pytest.approx(0.87406, abs=5e-6)
    np.testing.assert_allclose(out.phi, [1.0, 0.6114, 0.0])
    assert out.z == -1.0


def test_roll_gain_example():
    out = p_pi_axis(0.1, 0.0, 0.0, AxisGains(0.0597, 0.0249, 0.0471), AxisControllerState())
    assert out.e_v == pytest.approx(0.00597)
    assert out.u == pytest.approx(0.0061187, abs=5e-8)


@settings(max_examples=200, deadline=None)
@given(*[st.floats(-10, 10)] * 7)
def test_parameterization_identity(r, y, ydot, k1, k2, ki, integ):
    g = AxisGains(k1, k2, ki)
    out = p_pi_axis(r, y, ydot, g, AxisControllerState(integ))
    e = r - y
    assert out.u == pytest.approx(k1 * e + k2 * (k1 * e - ydot) + ki * integ, abs=1e-9)
    assert out.u == pytest.approx(float(out.phi @ g.theta), abs=1e-9)


def test_outer_loop_at_reference_is_zero():
    s = RigidBodyState.at_rest((1.0, 1.0, 1.0))
    gains = [AxisGains(0.2, 0.4, 0.1)] * 3
    F, outs = outer_loop(np.ones(3), s, gains, states())
    np.testing.assert_array_equal(F, 0.0)
    assert [o.z for o in outs] == [0.0, 0.0, 0.0]


def test_outer_loop_decoupled():
    gains = [AxisGains(0.2, 0.4, 0.1), AxisGains(0.3, 0.1, 0.0), AxisGains(0.6, 0.4, 0.2)]
    s = RigidBodyState.at_rest()
    F0, _ = outer_loop(np.zeros(3), s, gains, states())
    F1, _ = outer_loop(np.array([0.5, 0.0, 0.0]), s, gains, states())
    assert F1[0] != F0[0]
    np.testing.assert_array_equal(F1[1:], F0[1:])


def test_hover_needs_integral_only():
    # at the reference, F3 = -mg can come only from k_i * integral
    ki = 0.1753
    F, _ = outer_loop(np.zeros(3), RigidBodyState.at_rest(), [AxisGains(0.6, 0.4, ki)] * 3,
                      [AxisControllerState(), AxisControllerState(), AxisControllerState(-MG / ki)])
    assert F[2] == pytest.approx(-15.3036)


def test_level_hover_extraction():
    sp = attitude_extraction([0.0, 0.0, -MG], 0.0)
    np.testing.assert_allclose(sp.euler, 0.0, atol=1e-15)
    assert sp.f == pytest.approx(-15.3036)
    sp = attitude_extraction([0.0, 0.0, -MG], 1.0)
    np.testing.assert_allclose(sp.euler, [0.0, 0.0, 1.0], atol=1e-15)
    assert sp.f == pytest.approx(-15.3036)


@settings(max_examples=300, deadline=None)
@given(st.tuples(*[st.floats(-1, 1)] * 2), st.floats(0.3, 1.0), st.floats(0.1, 40.0), st.floats(-3.1, 3.1))
def test_extraction_reconstruction(h, n3, mag, psi):
    # n3 > 0.3 sits just beyond the default tilt cone, so widen the limit to 89 deg
    n = np.array([h[0], h[1], n3])
    n /= np.linalg.norm(n)
    if n[2] < 0.3:
        return
    F = -mag * n
    sp = attitude_extraction(F, psi, tilt_limit=math.radians(89.0))
    assert sp.euler[2] == psi
    np.testing.assert_allclose(rotation_from_euler(sp.euler) @ E3 * sp.f, F, atol=1e-9 * max(1.0, mag))


def test_degenerate_force_holds_previous_attitude():
    prev = AttitudeSetpoint(np.array([0.1, -0.2, 0.3]), -5.0)
    sp = attitude_extraction([0.0, 1e-8, 0.0], 0.0, prev)
    np.testing.assert_array_equal(sp.euler, prev.euler)
    assert sp.f == 0.0


def test_downward_force_is_saturated(caplog):
    tilt = math.radians(60.0)
    with caplog.at_level("WARNING"):
        sp = attitude_extraction([1.0, 0.0, 0.5], 0.0, tilt_limit=tilt)
    assert "tilt limit" in caplog.text
    axis = rotation_from_euler(sp.euler) @ E3
    assert axis[2] == pytest.approx(math.cos(tilt))
    assert axis[0] < 0  # leans toward the requested horizontal direction
    # thrust is the projection of the request on the saturated axis
    assert sp.f == pytest.approx(np.dot([1.0, 0.0, 0.5], axis))
    # a mostly downward request gets no thrust at all
    sp = attitude_extraction([0.1, 0.0, 1.0], 0.0, tilt_limit=tilt)
    assert sp.f == 0.0


def test_inner_loop_zero_cases():
    tau, _ = inner_loop(np.zeros(3), np.zeros(3), np.zeros(3), [AxisGains(0.06, 0.02, 0.04)] * 3, states())
    np.testing.assert_array_equal(tau, 0.0)
    tau, _ = inner_loop(np.ones(3), np.zeros(3), np.zeros(3), [AxisGains()] * 3, states())
    np.testing.assert_array_equal(tau, 0.0)


def test_inner_loop_singularity():
    with pytest.raises(SingularityError):
        inner_loop(np.zeros(3), np.array([0.0, math.pi / 2, 0.0]), np.zeros(3), [AxisGains()] * 3, states())


def test_measured_attitude():
    e = np.array([0.1, -0.2, 0.7])
    s = RigidBodyState(np.zeros(3), np.zeros(3), rotation_from_euler(e), np.array([0.0, 0.0, 0.5]))
    angles, rates = measured_attitude(s)
    np.testing.assert_allclose(angles, e, atol=1e-12)
    assert rates[2] == pytest.approx(0.5 * math.cos(0.1) / math.cos(-0.2))
