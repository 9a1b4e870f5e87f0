"""12-DOF multirotor rigid-body model.

Frame conventions: the inertial frame is NED (third axis down, gravity
``+g e3``). ``O`` resolves body-frame vectors into the inertial frame, so
``O @ e3 * f`` is the thrust force in inertial coordinates and the attitude
kinematics read ``dO/dt = O @ skew(omega)``. Thrust ``f`` is negative at hover.

The ``_``-prefixed functions are numba kernels shared with the closed-loop
simulator; the public functions wrap them with validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

GIMBAL_EPS = 1e-3
E3 = np.array([0.0, 0.0, 1.0])


class SingularityError(ValueError):
    """Pitch is too close to +-pi/2 for the 3-2-1 Euler parameterization."""


@dataclass(frozen=True)
class VehicleParams:
    m: float = 1.56
    J: np.ndarray = field(default_factory=lambda: np.diag([0.03, 0.03, 0.05]))
    g: float = 9.81

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        object.__setattr__(self, "J", J)
        if not (self.m > 0 and math.isfinite(self.m)):
            raise ValueError(f"mass must be positive, got {self.m}")
        if not (self.g > 0 and math.isfinite(self.g)):
            raise ValueError(f"g must be positive, got {self.g}")
        if J.shape != (3, 3) or not np.all(np.isfinite(J)):
            raise ValueError("J must be a finite 3x3 matrix")
        if not np.allclose(J, J.T, rtol=0, atol=1e-12):
            raise ValueError("J must be symmetric")
        if np.linalg.eigvalsh(J).min() <= 0:
            raise ValueError("J must be positive definite")

    @property
    def hover_thrust(self) -> float:
        return -self.m * self.g

    def scaled(self, mass_scale: float = 1.0, inertia_scale: float = 1.0) -> VehicleParams:
        return VehicleParams(m=self.m * mass_scale, J=self.J * inertia_scale, g=self.g)


@dataclass
class RigidBodyState:
    r: np.ndarray
    v: np.ndarray
    O: np.ndarray
    omega: np.ndarray

    @classmethod
    def at_rest(cls, r=(0.0, 0.0, 0.0)) -> RigidBodyState:
        return cls(np.array(r, dtype=float), np.zeros(3), np.eye(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.v, self.O.ravel(), self.omega])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> RigidBodyState:
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:15].reshape(3, 3).copy(), x[15:18].copy())


@dataclass
class WrenchCommand:
    f: float
    tau: np.ndarray


def _check_finite(name: str, value) -> None:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite value in {name}: {arr}")


def skew(w) -> np.ndarray:
    """Cross-product matrix: ``skew(a) @ b == np.cross(a, b)``."""
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _rotation_from_euler(phi, theta, psi, out):
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    out[0, 0] = cp * ct
    out[0, 1] = cp * st * sf - sp * cf
    out[0, 2] = cp * st * cf + sp * sf
    out[1, 0] = sp * ct
    out[1, 1] = sp * st * sf + cp * cf
    out[1, 2] = sp * st * cf - cp * sf
    out[2, 0] = -st
    out[2, 1] = ct * sf
    out[2, 2] = ct * cf


@njit(cache=True)
def _euler_from_rotation(O):
    """Returns (phi, theta, psi, ok); ok is False near gimbal lock."""
    s = -O[2, 0]
    if s > 1.0:
        s = 1.0
    elif s < -1.0:
        s = -1.0
    theta = math.asin(s)
    ok = abs(theta) < 0.5 * math.pi - GIMBAL_EPS
    phi = math.atan2(O[2, 1], O[2, 2])
    psi = math.atan2(O[1, 0], O[0, 0])
    return phi, theta, psi, ok


@njit(cache=True)
def _euler_rates(phi, theta, w, out):
    """Writes S(phi, theta) @ w into out; returns False near gimbal lock."""
    if abs(theta) >= 0.5 * math.pi - GIMBAL_EPS:
        return False
    sf, cf = math.sin(phi), math.cos(phi)
    ct = math.cos(theta)
    tt = math.tan(theta)
    out[0] = w[0] + sf * tt * w[1] + cf * tt * w[2]
    out[1] = cf * w[1] - sf * w[2]
    out[2] = (sf * w[1] + cf * w[2]) / ct
    return True


@njit(cache=True)
def _plant_derivative(x, f, tau, m, g, J, Jinv, out):
    """Rigid-body derivative over the 18-vector layout [r, v, O (row-major), omega]."""
    w0, w1, w2 = x[15], x[16], x[17]
    out[0] = x[3]
    out[1] = x[4]
    out[2] = x[5]
    # O e3 is the third column of O
    out[3] = x[8] * f / m
    out[4] = x[11] * f / m
    out[5] = g + x[14] * f / m
    # dO/dt = O skew(w)
    for i in range(3):
        a = x[6 + 3 * i]
        b = x[7 + 3 * i]
        c = x[8 + 3 * i]
        out[6 + 3 * i] = b * w2 - c * w1
        out[7 + 3 * i] = c * w0 - a * w2
        out[8 + 3 * i] = a * w1 - b * w0
    h0 = J[0, 0] * w0 + J[0, 1] * w1 + J[0, 2] * w2
    h1 = J[1, 0] * w0 + J[1, 1] * w1 + J[1, 2] * w2
    h2 = J[2, 0] * w0 + J[2, 1] * w1 + J[2, 2] * w2
    m0 = tau[0] - (w1 * h2 - w2 * h1)
    m1 = tau[1] - (w2 * h0 - w0 * h2)
    m2 = tau[2] - (w0 * h1 - w1 * h0)
    out[15] = Jinv[0, 0] * m0 + Jinv[0, 1] * m1 + Jinv[0, 2] * m2
    out[16] = Jinv[1, 0] * m0 + Jinv[1, 1] * m1 + Jinv[1, 2] * m2
    out[17] = Jinv[2, 0] * m0 + Jinv[2, 1] * m1 + Jinv[2, 2] * m2


@njit(cache=True)
def _orthonormalize(x):
    """One Bjorck step O <- O (3I - O^T O) / 2 on the rotation block of x.

    Converges quadratically to the polar factor, so a single step per
    integration step removes the O(dt^5) drift down to round-off.
    """
    O = x[6:15].reshape((3, 3)).copy()
    OtO = O.T @ O
    M = -OtO
    for i in range(3):
        M[i, i] += 3.0
    N = 0.5 * (O @ M)
    for i in range(3):
        for j in range(3):
            x[6 + 3 * i + j] = N[i, j]


# ---------------------------------------------------------------- public API


def rotation_from_euler(euler) -> np.ndarray:
    """Body-to-inertial rotation for 3-2-1 angles (roll, pitch, yaw): Rz(psi) Ry(theta) Rx(phi)."""
    phi, theta, psi = (float(a) for a in euler)
    _check_finite("euler", (phi, theta, psi))
    out = np.empty((3, 3))
    _rotation_from_euler(phi, theta, psi, out)
    return out


def euler_from_rotation(O) -> np.ndarray:
    O = np.asarray(O, dtype=float)
    _check_finite("O", O)
    phi, theta, psi, ok = _euler_from_rotation(O)
    if not ok:
        raise SingularityError(f"pitch {theta:.6f} rad is within {GIMBAL_EPS} of gimbal lock")
    return np.array([phi, theta, psi])


def euler_rate_matrix(euler) -> np.ndarray:
    phi, theta = float(euler[0]), float(euler[1])
    if abs(theta) >= 0.5 * math.pi - GIMBAL_EPS:
        raise SingularityError(f"pitch {theta:.6f} rad is within {GIMBAL_EPS} of gimbal lock")
    sf, cf, ct, tt = math.sin(phi), math.cos(phi), math.cos(theta), math.tan(theta)
    return np.array([[1.0, sf * tt, cf * tt], [0.0, cf, -sf], [0.0, sf / ct, cf / ct]])


def euler_rate_map(euler, omega) -> np.ndarray:
    """Euler-angle rates from body angular velocity."""
    _check_finite("euler", euler)
    _check_finite("omega", omega)
    out = np.empty(3)
    if not _euler_rates(float(euler[0]), float(euler[1]), np.asarray(omega, dtype=float), out):
        raise SingularityError(f"pitch {float(euler[1]):.6f} rad is within {GIMBAL_EPS} of gimbal lock")
    return out


def dynamics_derivative(state: RigidBodyState, u: WrenchCommand, p: VehicleParams):
    """Returns (r_dot, v_dot, O_dot, omega_dot)."""
    for name in ("r", "v", "O", "omega"):
        _check_finite(f"state.{name}", getattr(state, name))
    _check_finite("u.f", u.f)
    _check_finite("u.tau", u.tau)
    out = np.empty(18)
    _plant_derivative(
        state.as_vector(), float(u.f), np.asarray(u.tau, dtype=float),
        p.m, p.g, p.J, np.linalg.inv(p.J), out,
    )
    return out[0:3], out[3:6], out[6:15].reshape(3, 3), out[15:18]


def orthonormalize(O) -> np.ndarray:
    """Project a near-rotation matrix onto SO(3) (single polar-iteration step)."""
    x = np.zeros(18)
    x[6:15] = np.asarray(O, dtype=float).ravel()
    _orthonormalize(x)
    return x[6:15].reshape(3, 3)


@njit(cache=True)
def _plant_rk4(x, f, tau, m, g, J, Jinv, dt, steps, renorm):
    k1 = np.empty(18)
    k2 = np.empty(18)
    k3 = np.empty(18)
    k4 = np.empty(18)
    tmp = np.empty(18)
    for _ in range(steps):
        _plant_derivative(x, f, tau, m, g, J, Jinv, k1)
        tmp[:] = x + 0.5 * dt * k1
        _plant_derivative(tmp, f, tau, m, g, J, Jinv, k2)
        tmp[:] = x + 0.5 * dt * k2
        _plant_derivative(tmp, f, tau, m, g, J, Jinv, k3)
        tmp[:] = x + dt * k3
        _plant_derivative(tmp, f, tau, m, g, J, Jinv, k4)
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if renorm:
            _orthonormalize(x)


def integrate_plant(
    state: RigidBodyState, u: WrenchCommand, p: VehicleParams, dt: float, steps: int, renormalize: bool = True,
) -> RigidBodyState:
    """Open-loop RK4 under a constant wrench."""
    if not dt > 0 or steps < 0:
        raise ValueError("need dt > 0 and steps >= 0")
    x = state.as_vector()
    _plant_rk4(x, float(u.f), np.asarray(u.tau, dtype=float), p.m, p.g, p.J, np.linalg.inv(p.J), float(dt), int(steps), renormalize)
    _check_finite("state", x)
    return RigidBodyState.from_vector(x)
