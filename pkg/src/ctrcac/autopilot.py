"""Cascaded P-PI autopilot: position loop -> attitude extraction -> attitude loop.

Each of the six axes runs the same law

    e   = r - y
    e_v = k_p1 e - dy/dt
    u   = k_p1 e + k_p2 e_v + k_i int(e_v)

which is linear in the gains: ``u = [e, e_v, int e_v] @ (k_p1, k_p2, k_i)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .rigid_body import RigidBodyState, _euler_from_rotation, _euler_rates, SingularityError, GIMBAL_EPS

log = logging.getLogger(__name__)

EPS_FORCE = 1e-6
DEFAULT_TILT_LIMIT = math.radians(60.0)
OUTER_AXES = ("r1", "r2", "r3")
INNER_AXES = ("roll", "pitch", "yaw")


@dataclass
class AxisGains:
    k_p1: float = 0.0
    k_p2: float = 0.0
    k_i: float = 0.0

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.k_p1, self.k_p2, self.k_i])

    @classmethod
    def from_theta(cls, theta) -> AxisGains:
        return cls(*(float(t) for t in theta))


@dataclass
class AxisControllerState:
    ev_integral: float = 0.0


@dataclass
class AttitudeSetpoint:
    euler: np.ndarray
    f: float

    @classmethod
    def level(cls) -> AttitudeSetpoint:
        return cls(np.zeros(3), 0.0)


@dataclass
class AxisOutput:
    u: float
    phi: np.ndarray
    e_v: float
    z: float


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _p_pi(r, y, ydot, k_p1, k_p2, k_i, integral):
    """Returns (u, e, e_v); the regressor is (e, e_v, integral)."""
    e = r - y
    e_v = k_p1 * e - ydot
    u = e * k_p1 + e_v * k_p2 + integral * k_i
    return u, e, e_v


@njit(cache=True)
def _attitude_extraction(F, psi_d, prev, eps_f, cos_tilt, out):
    """Writes (phi_d, theta_d, psi_d, f_d) into out.

    Returns 0 for a regular setpoint, 1 if the previous setpoint was held
    (degenerate force), 2 if the thrust axis was saturated at the tilt limit.
    """
    norm = math.sqrt(F[0] * F[0] + F[1] * F[1] + F[2] * F[2])
    if norm < eps_f:
        out[0] = prev[0]
        out[1] = prev[1]
        out[2] = prev[2]
        out[3] = 0.0
        return 1
    # desired body e3 axis in inertial coordinates; thrust is negative along it
    n0 = -F[0] / norm
    n1 = -F[1] / norm
    n2 = -F[2] / norm
    f_d = -norm
    status = 0
    if n2 < cos_tilt:
        h = math.sqrt(n0 * n0 + n1 * n1)
        sin_tilt = math.sqrt(max(0.0, 1.0 - cos_tilt * cos_tilt))
        if h > 0.0:
            n0 = n0 / h * sin_tilt
            n1 = n1 / h * sin_tilt
            n2 = cos_tilt
        else:
            n0, n1, n2 = 0.0, 0.0, 1.0
        # best thrust along the saturated axis; zero if F points below it
        f_d = min(0.0, F[0] * n0 + F[1] * n1 + F[2] * n2)
        status = 2
    sp = math.sin(psi_d)
    cp = math.cos(psi_d)
    s = sp * n0 - cp * n1
    if s > 1.0:
        s = 1.0
    elif s < -1.0:
        s = -1.0
    out[0] = math.asin(s)
    out[1] = math.atan2(cp * n0 + sp * n1, n2)
    out[2] = psi_d
    out[3] = f_d
    return status


# ---------------------------------------------------------------- public API


def p_pi_axis(r_ref: float, y: float, y_dot: float, gains: AxisGains, state: AxisControllerState) -> AxisOutput:
    u, e, e_v = _p_pi(float(r_ref), float(y), float(y_dot), gains.k_p1, gains.k_p2, gains.k_i, state.ev_integral)
    return AxisOutput(u=u, phi=np.array([e, e_v, state.ev_integral]), e_v=e_v, z=-e)


def outer_loop(r_ref, state: RigidBodyState, gains, ctrl_states):
    """Desired inertial force plus per-axis controller outputs.

    There is no gravity feedforward; at hover the integral term carries the
    full ``-m g`` of the vertical channel.
    """
    outs = [p_pi_axis(r_ref[i], state.r[i], state.v[i], gains[i], ctrl_states[i]) for i in range(3)]
    return np.array([o.u for o in outs]), outs


def attitude_extraction(
    F_d, psi_d: float = 0.0, prev: AttitudeSetpoint | None = None,
    eps_f: float = EPS_FORCE, tilt_limit: float = DEFAULT_TILT_LIMIT,
) -> AttitudeSetpoint:
    """Thrust and Euler-angle setpoint aligning the body thrust axis with ``F_d``.

    Tilts beyond ``tilt_limit`` are saturated to the limit cone (with a
    warning); forces smaller than ``eps_f`` hold the previous attitude with
    zero thrust.
    """
    F = np.asarray(F_d, dtype=float)
    if not np.all(np.isfinite(F)):
        raise ValueError(f"non-finite force request {F}")
    prev = prev or AttitudeSetpoint.level()
    out = np.empty(4)
    prev_arr = np.array([*prev.euler, prev.f])
    status = _attitude_extraction(F, float(psi_d), prev_arr, eps_f, math.cos(tilt_limit), out)
    if status == 2:
        log.warning("force request %s exceeds the %.1f deg tilt limit; saturated", F, math.degrees(tilt_limit))
    return AttitudeSetpoint(out[:3].copy(), float(out[3]))


def inner_loop(euler_d, euler, euler_rates, gains, ctrl_states):
    """Body torque from the three decoupled attitude controllers."""
    if abs(float(euler[1])) >= 0.5 * math.pi - GIMBAL_EPS:
        raise SingularityError(f"pitch {float(euler[1]):.6f} rad is within {GIMBAL_EPS} of gimbal lock")
    outs = [p_pi_axis(euler_d[i], euler[i], euler_rates[i], gains[i], ctrl_states[i]) for i in range(3)]
    return np.array([o.u for o in outs]), outs


def measured_attitude(state: RigidBodyState):
    """Euler angles and Euler-angle rates of a rigid-body state."""
    phi, theta, psi, ok = _euler_from_rotation(state.O)
    rates = np.empty(3)
    if not ok or not _euler_rates(phi, theta, state.omega, rates):
        raise SingularityError(f"pitch {theta:.6f} rad is within {GIMBAL_EPS} of gimbal lock")
    return np.array([phi, theta, psi]), rates
