"""Closed-loop simulation: plant + autopilot + optional online learners.

The full system is one autonomous ODE over a flat state vector::

    [0:18)    rigid body  r, v, O (row-major), omega
    [18:24)   integrals of e_v  (r1, r2, r3, roll, pitch, yaw)
    [24:...)  six optimizer blocks (P, b, regressor filters, control filter)
    [-4:]     first-order actuator states (f, tau1, tau2, tau3)

advanced by fixed-step RK4. Target-environment sensors (delay, zero-order
hold, noise) are discrete-time and run between steps; within a step the
controller sees a constant measurement.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import references
from .autopilot import INNER_AXES, OUTER_AXES, AttitudeSetpoint, _attitude_extraction, _p_pi
from .config import LOOP_KEYS, ScenarioConfig
from .rcac import CovarianceError, _gains, _rcac_derivative, block_size, check_covariance
from .rigid_body import (
    RigidBodyState, _euler_from_rotation, _euler_rates, _orthonormalize, _plant_derivative,
)

AXES = OUTER_AXES + INNER_AXES
AXIS_LOOP = ("outer_xy", "outer_xy", "outer_z", "inner", "inner", "inner")
PLANT, INTEG = 0, 18
N_AUX = 64

# aux layout written by the derivative kernel
AUX_SETPOINT = slice(0, 4)
AUX_EXTRACT = 4
AUX_WRENCH = slice(5, 9)
AUX_Z = slice(9, 15)
AUX_GAINS = slice(15, 33)
AUX_U = slice(33, 39)
AUX_PHI = slice(39, 57)
AUX_FORCE = slice(57, 60)

OK, GIMBAL = 0, 2
STATUS_TEXT = {GIMBAL: "attitude reached gimbal lock", 1: "non-finite state"}

TELEMETRY_COLUMNS = (
    ["t", "r1", "r2", "r3", "phi", "theta", "psi", "f", "tau1", "tau2", "tau3"]
    + [f"z{i}" for i in range(1, 7)]
    + [f"{axis}_{g}" for axis in AXES for g in ("kp1", "kp2", "ki")]
)


class DivergenceError(RuntimeError):
    """The simulation produced a non-finite or singular state."""

    def __init__(self, message: str, t: float, telemetry=None, covariances=None):
        super().__init__(f"{message} at t = {t:.6f} s")
        self.t = t
        self.telemetry = telemetry
        self.covariances = covariances if covariances is not None else []


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _measure(x, out):
    """Ideal sensor: r, v, Euler angles, body rates. Returns False near gimbal lock."""
    for i in range(6):
        out[i] = x[i]
    phi, theta, psi, ok = _euler_from_rotation(x[6:15].reshape((3, 3)))
    out[6] = phi
    out[7] = theta
    out[8] = psi
    out[9] = x[15]
    out[10] = x[16]
    out[11] = x[17]
    return ok


@njit(cache=True)
def _derivative(
    x, ref, meas, use_meas, learn, frozen, offs, ords, fA, fB, fC, rz, J, Jinv, opts, prev, dx, aux,
):
    m, g, ff, eps_f, cos_tilt = opts[0], opts[1], opts[2], opts[3], opts[4]
    f_max, tau_max, clamp, act_tau, applied_u = opts[5], opts[6], opts[7], opts[8], opts[9] > 0.0
    y = np.empty(12)
    if use_meas:
        y[:] = meas
    elif not _measure(x, y):
        return GIMBAL
    rates = np.empty(3)
    if not _euler_rates(y[6], y[7], y[9:12], rates):
        return GIMBAL

    theta = np.empty(3)
    u = np.empty(6)
    for a in range(6):
        if learn:
            _gains(x[offs[a]:], theta)
        else:
            theta[0] = frozen[a, 0]
            theta[1] = frozen[a, 1]
            theta[2] = frozen[a, 2]
        aux[15 + 3 * a] = theta[0]
        aux[16 + 3 * a] = theta[1]
        aux[17 + 3 * a] = theta[2]

    # outer loop
    F = np.empty(3)
    for i in range(3):
        k1, k2, ki = aux[15 + 3 * i], aux[16 + 3 * i], aux[17 + 3 * i]
        integ = x[INTEG + i]
        ui, e, ev = _p_pi(ref[i], y[i], y[3 + i], k1, k2, ki, integ)
        u[i] = ui
        F[i] = ui
        aux[9 + i] = -e
        aux[39 + 3 * i] = e
        aux[40 + 3 * i] = ev
        aux[41 + 3 * i] = integ
        dx[INTEG + i] = 0.0 if (abs(integ) >= clamp and integ * ev > 0.0) else ev
    F[2] += ff
    aux[57] = F[0]
    aux[58] = F[1]
    aux[59] = F[2]

    sp = np.empty(4)
    aux[4] = _attitude_extraction(F, ref[3], prev, eps_f, cos_tilt, sp)
    aux[0:4] = sp

    # inner loop
    for i in range(3):
        a = 3 + i
        k1, k2, ki = aux[15 + 3 * a], aux[16 + 3 * a], aux[17 + 3 * a]
        integ = x[INTEG + a]
        ui, e, ev = _p_pi(sp[i], y[6 + i], rates[i], k1, k2, ki, integ)
        u[a] = ui
        aux[9 + a] = -e
        aux[39 + 3 * a] = e
        aux[40 + 3 * a] = ev
        aux[41 + 3 * a] = integ
        dx[INTEG + a] = 0.0 if (abs(integ) >= clamp and integ * ev > 0.0) else ev
    for a in range(6):
        aux[33 + a] = u[a]

    cmd = np.empty(4)
    cmd[0] = min(max(sp[3], -f_max), f_max)
    for i in range(3):
        cmd[1 + i] = min(max(u[3 + i], -tau_max), tau_max)

    na = x.size - 4
    w = np.empty(4)
    if act_tau > 0.0:
        for i in range(4):
            w[i] = x[na + i]
            dx[na + i] = (cmd[i] - w[i]) / act_tau
    else:
        for i in range(4):
            w[i] = cmd[i]
            dx[na + i] = 0.0
    aux[5:9] = w
    _plant_derivative(x, w[0], w[1:4], m, g, J, Jinv, dx)

    phi = np.empty(3)
    for a in range(6):
        o = offs[a]
        n = ords[a]
        nb = 12 + 4 * n
        if learn:
            phi[0] = aux[39 + 3 * a]
            phi[1] = aux[40 + 3 * a]
            phi[2] = aux[41 + 3 * a]
            ua = u[a]
            if applied_u:
                # control actually reaching the plant: realized force / torque
                ua = x[8 + 3 * a] * w[0] if a < 3 else w[a - 2]
                if a == 2:
                    ua -= ff
            _rcac_derivative(x[o:o + nb], n, fA[a], fB[a], fC[a], rz[a], phi, ua, aux[9 + a], dx[o:o + nb])
        else:
            dx[o:o + nb] = 0.0
    return OK


@njit(cache=True)
def _rk4_step(
    x, dt, refs, meas, use_meas, learn, frozen, offs, ords, fA, fB, fC, rz, J, Jinv, opts, prev, aux, renorm,
):
    """One RK4 step in place. refs rows are the references at t, t + dt/2, t + dt.

    aux receives the controller quantities at the start of the step.
    """
    n = x.size
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    xs = np.empty(n)
    scratch = np.empty(aux.size)
    st = _derivative(x, refs[0], meas, use_meas, learn, frozen, offs, ords, fA, fB, fC, rz,
                     J, Jinv, opts, prev, k1, aux)
    if st != OK:
        return st
    if aux[4] != 1.0:
        prev[:] = aux[0:4]
    for i in range(n):
        xs[i] = x[i] + 0.5 * dt * k1[i]
    st = _derivative(xs, refs[1], meas, use_meas, learn, frozen, offs, ords, fA, fB, fC, rz,
                     J, Jinv, opts, prev, k2, scratch)
    if st != OK:
        return st
    for i in range(n):
        xs[i] = x[i] + 0.5 * dt * k2[i]
    st = _derivative(xs, refs[1], meas, use_meas, learn, frozen, offs, ords, fA, fB, fC, rz,
                     J, Jinv, opts, prev, k3, scratch)
    if st != OK:
        return st
    for i in range(n):
        xs[i] = x[i] + dt * k3[i]
    st = _derivative(xs, refs[2], meas, use_meas, learn, frozen, offs, ords, fA, fB, fC, rz,
                     J, Jinv, opts, prev, k4, scratch)
    if st != OK:
        return st
    for i in range(n):
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    if renorm:
        _orthonormalize(x)
    for i in range(n):
        if not math.isfinite(x[i]):
            return 1
    return OK


# ---------------------------------------------------------------- state


@dataclass
class ClosedLoopState:
    x: np.ndarray
    t: float = 0.0
    setpoint: np.ndarray = field(default_factory=lambda: np.zeros(4))
    step_index: int = 0

    def copy(self) -> ClosedLoopState:
        return ClosedLoopState(self.x.copy(), self.t, self.setpoint.copy(), self.step_index)

    @property
    def body(self) -> RigidBodyState:
        return RigidBodyState.from_vector(self.x[PLANT:PLANT + 18])

    @property
    def integrals(self) -> np.ndarray:
        return self.x[INTEG:INTEG + 6]


@dataclass
class Telemetry:
    columns: tuple = tuple(TELEMETRY_COLUMNS)
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def array(self) -> np.ndarray:
        if not self.rows:
            return np.empty((0, len(self.columns)))
        return np.asarray(self.rows)

    def column(self, name: str) -> np.ndarray:
        return self.array()[:, self.columns.index(name)] if self.rows else np.empty(0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


@dataclass
class RunResult:
    telemetry: Telemetry
    gains: np.ndarray  # 6x3
    state: ClosedLoopState
    covariances: list = field(default_factory=list)  # (t, 6x3x3) at log times when learning


class ClosedLoop:
    """Packs a scenario into kernel arguments and advances the coupled ODE."""

    def __init__(self, cfg: ScenarioConfig, gains=None):
        self.cfg = cfg
        tp = cfg.perturbations
        plant = cfg.vehicle.scaled(tp.mass_scale, tp.inertia_scale)
        self.m, self.g = plant.m, plant.g
        self.J = np.ascontiguousarray(plant.J)
        self.Jinv = np.linalg.inv(self.J)
        self.learn = cfg.mode == "learn"

        hp = [cfg.hyperparams[key] for key in AXIS_LOOP]
        self.hyper = hp
        self.ords = np.array([h.gf.order for h in hp], dtype=np.int64)
        nmax = int(self.ords.max())
        self.fA = np.zeros((6, nmax, nmax))
        self.fB = np.zeros((6, nmax))
        self.fC = np.zeros((6, nmax))
        from .lti_filter import realize

        for a, h in enumerate(hp):
            ss = realize(h.gf)
            n = ss.order
            self.fA[a, :n, :n] = ss.A
            self.fB[a, :n] = ss.B
            self.fC[a, :n] = ss.C
        self.rz = np.array([h.rz for h in hp])
        self.p0 = np.array([h.p0 for h in hp])
        offs = [24]
        for n in self.ords[:-1]:
            offs.append(offs[-1] + block_size(int(n)))
        self.offs = np.array(offs, dtype=np.int64)
        self.size = int(offs[-1] + block_size(int(self.ords[-1])) + 4)

        if gains is None:
            gains = cfg.initial_gains if cfg.initial_gains is not None else np.zeros((6, 3))
        self.initial_gains = np.array(gains, dtype=float).reshape(6, 3)
        self.frozen = self.initial_gains.copy()

        ap = cfg.autopilot
        self.ff = -cfg.vehicle.m * cfg.vehicle.g if ap.gravity_feedforward else 0.0
        self.eps_f = ap.eps_force
        self.cos_tilt = math.cos(math.radians(ap.tilt_limit_deg))
        self.f_max = math.inf if ap.thrust_limit_mg is None else ap.thrust_limit_mg * cfg.vehicle.m * cfg.vehicle.g
        self.tau_max = math.inf if ap.torque_limit is None else ap.torque_limit
        self.clamp = math.inf if ap.integral_clamp is None else ap.integral_clamp
        self.act_tau = tp.actuator_tau
        self.dt = cfg.integrator.dt
        self.opts = np.array([
            self.m, self.g, self.ff, self.eps_f, self.cos_tilt, self.f_max, self.tau_max,
            self.clamp, self.act_tau, 1.0 if ap.learn_applied else 0.0,
        ])
        self.reference = references.from_config(cfg.trajectory, psi=ap.yaw_ref, z_up=ap.z_up)

    # -- state helpers

    def initial_state(self) -> ClosedLoopState:
        x = np.zeros(self.size)
        x[0:3] = self.cfg.initial_position
        x[6:15] = np.eye(3).ravel()
        for a in range(6):
            o = self.offs[a]
            h = self.hyper[a]
            P = h.p0 * np.eye(3)
            x[o:o + 9] = P.ravel()
            # b chosen so that P b reproduces the initial gains (zero by default)
            x[o + 9:o + 12] = self.initial_gains[a] / h.p0
        x[-4] = 0.0
        return ClosedLoopState(x)

    def block(self, s: ClosedLoopState, axis: int) -> np.ndarray:
        o = self.offs[axis]
        return s.x[o:o + block_size(int(self.ords[axis]))]

    def covariance(self, s: ClosedLoopState, axis: int) -> np.ndarray:
        return self.block(s, axis)[:9].reshape(3, 3)

    def gains(self, s: ClosedLoopState) -> np.ndarray:
        if not self.learn:
            return self.frozen.copy()
        out = np.empty((6, 3))
        for a in range(6):
            blk = self.block(s, a)
            out[a] = blk[:9].reshape(3, 3) @ blk[9:12]
        return out

    def check_covariances(self, s: ClosedLoopState) -> None:
        if not self.learn:
            return
        for a in range(6):
            check_covariance(self.covariance(s, a), self.p0[a], label=f"{AXES[a]}: ")

    # -- kernel calls

    def _args(self, use_meas, meas):
        return (
            meas, use_meas, self.learn, self.frozen, self.offs, self.ords, self.fA, self.fB, self.fC,
            self.rz, self.J, self.Jinv, self.opts,
        )

    def derivative(self, s: ClosedLoopState, ref=None, meas=None):
        """Full state derivative at s; returns (dx, aux)."""
        if ref is None:
            ref = self.reference.sample([s.t])[0]
        use_meas = meas is not None
        meas = np.zeros(12) if meas is None else np.asarray(meas, dtype=float)
        dx = np.empty(self.size)
        aux = np.zeros(N_AUX)
        st = _derivative(s.x, np.asarray(ref, dtype=float), *self._args(use_meas, meas), s.setpoint.copy(), dx, aux)
        if st != OK:
            raise DivergenceError(STATUS_TEXT[st], s.t)
        return dx, aux

    def step(self, s: ClosedLoopState, refs=None, meas=None, aux=None) -> ClosedLoopState:
        """One RK4 step; returns a new state."""
        if refs is None:
            refs = self.reference.sample([s.t, s.t + 0.5 * self.dt, s.t + self.dt])
        out = s.copy()
        use_meas = meas is not None
        meas = np.zeros(12) if meas is None else meas
        aux = np.zeros(N_AUX) if aux is None else aux
        st = _rk4_step(out.x, self.dt, refs, *self._args(use_meas, meas), out.setpoint, aux, self.cfg.renormalize)
        if st != OK:
            raise DivergenceError(STATUS_TEXT[st], s.t + self.dt)
        out.step_index += 1
        out.t = out.step_index * self.dt
        return out


class SensorPipeline:
    """Delay line, zero-order hold and additive Gaussian noise on the 12 measured channels."""

    def __init__(self, tp, dt: float, seed: int):
        self.delay_steps = int(round(tp.meas_delay / dt))
        self.hold_steps = 1 if tp.sensor_rate is None else max(1, int(round(1.0 / (tp.sensor_rate * dt))))
        self.sigma = np.repeat(np.asarray(tp.meas_noise_sigma, dtype=float), 3)
        self.noisy = bool(np.any(self.sigma > 0))
        self.rng = np.random.Generator(np.random.Philox(seed))
        self.buffer = np.zeros((self.delay_steps + 1, 12))
        self.filled = 0
        self.held = np.zeros(12)
        self._true = np.zeros(12)

    def update(self, x: np.ndarray, k: int) -> np.ndarray:
        """Records the true state at step k and returns the controller's measurement."""
        if not _measure(x, self._true):
            raise DivergenceError(STATUS_TEXT[GIMBAL], float("nan"))
        slot = k % self.buffer.shape[0]
        self.buffer[slot] = self._true
        if k % self.hold_steps == 0:
            src = max(k - self.delay_steps, 0)
            self.held = self.buffer[src % self.buffer.shape[0]].copy()
            if self.noisy:
                self.held += self.sigma * self.rng.standard_normal(12)
        return self.held


def _checked(loop: ClosedLoop, s: ClosedLoopState, t: float, telemetry, covs) -> None:
    try:
        loop.check_covariances(s)
    except CovarianceError as exc:
        raise DivergenceError(f"{exc} (integration step too large for the learning transient?)", t, telemetry, covs) from exc


def run(
    cfg: ScenarioConfig, gains=None, state: ClosedLoopState | None = None, record_covariance: bool = False,
) -> RunResult:
    """Simulates ``cfg.duration`` seconds and returns telemetry plus final gains.

    ``gains`` overrides the configured initial (or frozen) gains; ``state``
    continues from an earlier run instead of the rest initial condition.
    """
    loop = ClosedLoop(cfg, gains)
    s = loop.initial_state() if state is None else state.copy()
    dt = loop.dt
    n_steps = int(round(cfg.duration / dt))
    decim = max(1, int(round(1.0 / (cfg.log_rate * dt))))
    telemetry = Telemetry()
    covs = []

    k0 = s.step_index
    grid = (2 * k0 + np.arange(2 * n_steps + 1)) * (0.5 * dt)
    refs_all = loop.reference.sample(grid) if n_steps else np.empty((0, 4))

    tp = cfg.perturbations
    sensors = SensorPipeline(tp, dt, cfg.seed) if tp.samples_measurements else None
    aux = np.zeros(N_AUX)
    args = loop._args(False, np.zeros(12))
    renorm = cfg.renormalize
    x, prev = s.x, s.setpoint
    pre = np.empty(9)

    for j in range(n_steps):
        k = k0 + j
        if sensors is not None:
            try:
                meas = sensors.update(x, k)
            except DivergenceError as exc:
                raise DivergenceError(STATUS_TEXT[GIMBAL], k * dt, telemetry, covs) from exc
            args = loop._args(True, meas)
        log_now = j % decim == 0
        if log_now:
            pre[:] = x[6:15]
            r = x[0:3].copy()
            if loop.learn:
                _checked(loop, s, k * dt, telemetry, covs)
                if record_covariance:
                    covs.append((k * dt, np.array([loop.covariance(s, a) for a in range(6)])))
        st = _rk4_step(x, dt, refs_all[2 * j:2 * j + 3], *args, prev, aux, renorm)
        if st != OK:
            s.step_index, s.t = k, k * dt
            raise DivergenceError(STATUS_TEXT[st], (k + 1) * dt, telemetry, covs)
        if log_now:
            phi, theta, psi, _ = _euler_from_rotation(pre.reshape(3, 3))
            telemetry.rows.append(
                [k * dt, *r, phi, theta, psi, *aux[AUX_WRENCH], *aux[AUX_Z], *aux[AUX_GAINS]]
            )
    s.step_index = k0 + n_steps
    s.t = s.step_index * dt
    if loop.learn:
        _checked(loop, s, s.t, telemetry, covs)
    return RunResult(telemetry, loop.gains(s), s, covs)
