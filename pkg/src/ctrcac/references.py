"""Position/yaw command generators.

Each reference maps time to a 4-vector ``(r1, r2, r3, psi_d)``. ``sample``
evaluates many times at once, which is what the simulator uses.
"""

from __future__ import annotations

import math

import numpy as np


class Reference:
    def __init__(self, psi: float = 0.0, z_up: bool = False):
        self.psi = float(psi)
        self.z_sign = -1.0 if z_up else 1.0

    def _position(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, times) -> np.ndarray:
        t = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(t < 0):
            raise ValueError("references are defined for t >= 0")
        out = np.empty((t.size, 4))
        out[:, :3] = self._position(t)
        out[:, 2] *= self.z_sign
        out[:, 3] = self._yaw(t)
        return out

    def _yaw(self, t: np.ndarray) -> np.ndarray:
        return np.full(t.size, self.psi)

    def __call__(self, t: float):
        row = self.sample([t])[0]
        return row[:3], float(row[3])


class Waypoint(Reference):
    """Constant position command; no velocity command is given."""

    def __init__(self, target=(1.0, 1.0, 1.0), **kw):
        super().__init__(**kw)
        self.target = np.asarray(target, dtype=float).reshape(3)

    def _position(self, t):
        return np.broadcast_to(self.target, (t.size, 3))


class Helix(Reference):
    """(cos wt, sin wt, wt): unit-radius helix, pitch 2*pi per turn."""

    def __init__(self, omega: float = 0.1, **kw):
        super().__init__(**kw)
        if not omega > 0:
            raise ValueError("helix rate must be positive")
        self.omega = float(omega)

    def _position(self, t):
        wt = self.omega * t
        return np.column_stack([np.cos(wt), np.sin(wt), wt])


class Table(Reference):
    """Piecewise-linear interpolation of (t, r1, r2, r3[, psi]) rows, held past the ends."""

    def __init__(self, rows, **kw):
        super().__init__(**kw)
        rows = np.asarray(rows, dtype=float)
        self.t = rows[:, 0]
        self.r = rows[:, 1:4]
        self.psi_table = rows[:, 4] if rows.shape[1] > 4 else None

    def _position(self, t):
        return np.column_stack([np.interp(t, self.t, self.r[:, k]) for k in range(3)])

    def _yaw(self, t):
        if self.psi_table is None:
            return super()._yaw(t)
        return np.interp(t, self.t, self.psi_table)


def waypoint_reference(t: float, target=(1.0, 1.0, 1.0)):
    if t < 0:
        raise ValueError("references are defined for t >= 0")
    return np.asarray(target, dtype=float).copy(), 0.0


def helix_reference(t: float, omega: float = 0.1):
    if t < 0 or not omega > 0:
        raise ValueError("need t >= 0 and omega > 0")
    wt = omega * t
    return np.array([math.cos(wt), math.sin(wt), wt]), 0.0


def from_config(traj, psi: float = 0.0, z_up: bool = False) -> Reference:
    if traj.kind == "waypoint":
        return Waypoint(traj.target, psi=psi, z_up=z_up)
    if traj.kind == "helix":
        return Helix(traj.omega, psi=psi, z_up=z_up)
    return Table(traj.table, psi=psi, z_up=z_up)
