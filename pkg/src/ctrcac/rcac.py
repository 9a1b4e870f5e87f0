"""Continuous-time retrospective cost optimizer.

For a controller ``u = Phi @ theta`` with performance ``z``, the
retrospective performance of a candidate gain ``th`` is

    zhat = z + Phi_f @ th - u_f

where ``Phi_f`` and ``u_f`` are ``Phi`` and ``u`` passed through the filter
``G_f(s)``. The cost ``J(t, th) = int_0^t Rz zhat^2 + th' R_theta th`` is
minimized exactly at every ``t`` by ``theta* = P b`` with

    dP/dt = -P Phi_f' Rz Phi_f P,        P(0) = R_theta^-1
    db/dt = -Phi_f' Rz (z - u_f),       b(0) = 0

(setting the gradient of ``J`` to zero gives
``(R_theta + int Phi_f' Rz Phi_f) th = -int Phi_f' Rz (z - u_f)``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .lti_filter import FilterBank, TransferFunction

N_GAINS = 3


class CovarianceError(RuntimeError):
    """P lost positive definiteness; usually a symptom of too large a step."""


@dataclass(frozen=True)
class RcacHyperparams:
    gf: TransferFunction
    rz: float
    p0: float

    def __post_init__(self):
        if not self.rz > 0:
            raise ValueError(f"rz must be positive, got {self.rz}")
        if not self.p0 > 0:
            raise ValueError(f"p0 must be positive, got {self.p0}")

    @property
    def r_theta(self) -> float:
        return 1.0 / self.p0

    def to_dict(self) -> dict:
        return {"gf": self.gf.to_dict(), "rz": self.rz, "p0": self.p0}


# Tuned values for the three loop families (outer horizontal, outer vertical, inner).
DEFAULT_HYPERPARAMS = {
    "outer_xy": RcacHyperparams(TransferFunction((1.0,), (0.5, 1.0)), rz=1e4, p0=1e3),
    "outer_z": RcacHyperparams(TransferFunction.from_poles([-1.5, -3.0]), rz=1e4, p0=1e5),
    "inner": RcacHyperparams(TransferFunction((1.0,), (2.0, 1.0)), rz=1e4, p0=1e3),
}


@dataclass
class RegressorSample:
    phi: np.ndarray
    u: float
    z: float

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float).reshape(N_GAINS)
        if not (np.all(np.isfinite(self.phi)) and np.isfinite(self.u) and np.isfinite(self.z)):
            raise ValueError(f"non-finite regressor sample: phi={self.phi}, u={self.u}, z={self.z}")


@dataclass
class RcacState:
    P: np.ndarray
    b: np.ndarray
    phi_bank: FilterBank
    u_bank: FilterBank
    p0: float = field(default=1.0)

    @classmethod
    def initial(cls, h: RcacHyperparams) -> RcacState:
        return cls(
            P=h.p0 * np.eye(N_GAINS),
            b=np.zeros(N_GAINS),
            phi_bank=FilterBank(h.gf, N_GAINS),
            u_bank=FilterBank(h.gf, 1),
            p0=h.p0,
        )

    @property
    def phi_f(self) -> np.ndarray:
        return self.phi_bank.outputs

    @property
    def u_f(self) -> float:
        return float(self.u_bank.outputs[0])

    @property
    def n_filter(self) -> int:
        return self.phi_bank.ss.order

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.P.ravel(), self.b, self.phi_bank.x.ravel(), self.u_bank.x.ravel()])

    def load_vector(self, x) -> None:
        n = self.n_filter
        self.P = x[0:9].reshape(3, 3).copy()
        self.b = x[9:12].copy()
        self.phi_bank.x = x[12 : 12 + 3 * n].reshape(3, n).copy()
        self.u_bank.x = x[12 + 3 * n : 12 + 4 * n].reshape(1, n).copy()

    def check(self) -> None:
        check_covariance(self.P, self.p0)


def block_size(filter_order: int) -> int:
    """Length of one axis's flattened optimizer state: P, b, 3 regressor filters, 1 control filter."""
    return 9 + 3 + 4 * filter_order


def check_covariance(P: np.ndarray, p0: float, label: str = "") -> None:
    asym = np.linalg.norm(P - P.T)
    if asym > 1e-9:
        raise CovarianceError(f"{label}P asymmetric, |P - P'| = {asym:.3e}")
    # P shrinks like the inverse of the accumulated information, so its
    # smallest eigenvalue may legitimately fall many decades below p0
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        lam = np.linalg.eigvalsh(P).min()
        raise CovarianceError(f"{label}P lost positive definiteness, min eigenvalue {lam:.3e}") from None


@njit(cache=True)
def _gains(blk, theta):
    for i in range(3):
        theta[i] = blk[3 * i] * blk[9] + blk[3 * i + 1] * blk[10] + blk[3 * i + 2] * blk[11]


@njit(cache=True)
def _rcac_derivative(blk, n, A, B, C, rz, phi, u, z, dblk):
    """Derivative of one axis's flattened optimizer state.

    Returns ``z - u_f`` so callers can form the retrospective performance.
    """
    xo = 12
    phif = np.empty(3)
    for k in range(3):
        y = 0.0
        for i in range(n):
            acc = B[i] * phi[k]
            for j in range(n):
                acc += A[i, j] * blk[xo + k * n + j]
            dblk[xo + k * n + i] = acc
            y += C[i] * blk[xo + k * n + i]
        phif[k] = y
    uo = xo + 3 * n
    uf = 0.0
    for i in range(n):
        acc = B[i] * u
        for j in range(n):
            acc += A[i, j] * blk[uo + j]
        dblk[uo + i] = acc
        uf += C[i] * blk[uo + i]

    # w = P phi_f'; dP = -rz w w' is symmetric by construction
    w = np.empty(3)
    for i in range(3):
        w[i] = blk[3 * i] * phif[0] + blk[3 * i + 1] * phif[1] + blk[3 * i + 2] * phif[2]
    for i in range(3):
        for j in range(3):
            dblk[3 * i + j] = -rz * w[i] * w[j]
    resid = z - uf
    for i in range(3):
        dblk[9 + i] = -rz * phif[i] * resid
    return resid


def rcac_derivative(s: RcacState, sample: RegressorSample, h: RcacHyperparams, x=None):
    """Derivative of the optimizer state for one regressor sample.

    ``x`` optionally overrides the state (flattened as in ``RcacState.as_vector``),
    which is how the integrators evaluate intermediate stages.
    """
    blk = s.as_vector() if x is None else np.asarray(x, dtype=float)
    if not np.all(np.isfinite(blk)):
        raise ValueError("non-finite optimizer state")
    ss = s.phi_bank.ss
    dblk = np.empty_like(blk)
    _rcac_derivative(blk, ss.order, ss.A, ss.B, ss.C, float(h.rz), sample.phi, float(sample.u), float(sample.z), dblk)
    return dblk


def current_gains(s: RcacState) -> np.ndarray:
    return s.P @ s.b


def retrospective_performance(z: float, phi_f, u_f: float, theta) -> float:
    return float(z + np.dot(phi_f, theta) - u_f)


def retrospective_cost(times, phi_f, u_f, z, theta, h: RcacHyperparams) -> float:
    """Trapezoid-rule evaluation of the regularized retrospective cost."""
    zhat = np.asarray(z) + np.asarray(phi_f) @ np.asarray(theta) - np.asarray(u_f)
    return float(np.trapezoid(h.rz * zhat**2, times) + np.dot(theta, theta) / h.p0)


def batch_oracle(times, phi_f, u_f, z, h: RcacHyperparams) -> np.ndarray:
    """Direct minimizer of the retrospective cost over a sampled history.

    Discretizes the integral with trapezoid weights and solves the regularized
    normal equations. Intended as ground truth for the P, b propagation.
    """
    times = np.asarray(times, dtype=float)
    phi_f = np.asarray(phi_f, dtype=float).reshape(len(times), -1)
    u_f = np.asarray(u_f, dtype=float).reshape(len(times))
    z = np.asarray(z, dtype=float).reshape(len(times))
    n = phi_f.shape[1]
    if len(times) < 1:
        raise ValueError("batch oracle needs at least one sample")
    w = np.zeros(len(times))
    if len(times) > 1:
        dt = np.diff(times)
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
    wr = h.rz * w
    A = np.eye(n) / h.p0 + (phi_f * wr[:, None]).T @ phi_f
    rhs = -(phi_f * wr[:, None]).T @ (z - u_f)
    return np.linalg.solve(A, rhs)


@njit(cache=True)
def _propagate(blk, n, A, B, C, rz, sig, dt, theta, phif, uf, Ph):
    """RK4 over a signal table sampled on the half-step grid.

    ``sig[2k]`` holds (phi, u, z) at step k and ``sig[2k+1]`` at the midpoint.
    Records gains and filtered signals at every step, including t = 0.
    """
    m = blk.size
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    tmp = np.empty(m)
    xo = 12
    uo = xo + 3 * n
    steps = theta.shape[0] - 1
    for k in range(steps + 1):
        _gains(blk, theta[k])
        for i in range(9):
            Ph[k, i] = blk[i]
        for c in range(3):
            y = 0.0
            for i in range(n):
                y += C[i] * blk[xo + c * n + i]
            phif[k, c] = y
        y = 0.0
        for i in range(n):
            y += C[i] * blk[uo + i]
        uf[k] = y
        if k == steps:
            break
        s0 = sig[2 * k]
        s1 = sig[2 * k + 1]
        s2 = sig[2 * k + 2]
        _rcac_derivative(blk, n, A, B, C, rz, s0[:3], s0[3], s0[4], k1)
        for i in range(m):
            tmp[i] = blk[i] + 0.5 * dt * k1[i]
        _rcac_derivative(tmp, n, A, B, C, rz, s1[:3], s1[3], s1[4], k2)
        for i in range(m):
            tmp[i] = blk[i] + 0.5 * dt * k2[i]
        _rcac_derivative(tmp, n, A, B, C, rz, s1[:3], s1[3], s1[4], k3)
        for i in range(m):
            tmp[i] = blk[i] + dt * k3[i]
        _rcac_derivative(tmp, n, A, B, C, rz, s2[:3], s2[3], s2[4], k4)
        for i in range(m):
            blk[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@dataclass
class Propagation:
    times: np.ndarray
    theta: np.ndarray  # (k, 3)
    phi_f: np.ndarray  # (k, 3)
    u_f: np.ndarray
    z: np.ndarray
    P: np.ndarray  # (k, 3, 3)
    state: RcacState


def propagate(h: RcacHyperparams, signal, duration: float, dt: float = 1e-3) -> Propagation:
    """Integrates one optimizer open loop against a prescribed signal.

    ``signal(t)`` takes an array of times and returns an array of shape
    ``(len(t), 5)`` holding (phi1, phi2, phi3, u, z). It is evaluated on the
    half-step grid that RK4 needs.
    """
    steps = int(round(duration / dt))
    grid = np.arange(2 * steps + 1) * (0.5 * dt)
    sig = np.ascontiguousarray(np.asarray(signal(grid), dtype=float).reshape(len(grid), 5))
    if not np.all(np.isfinite(sig)):
        raise ValueError("non-finite regressor sample in signal table")
    s = RcacState.initial(h)
    ss = s.phi_bank.ss
    blk = s.as_vector()
    theta = np.empty((steps + 1, N_GAINS))
    phif = np.empty((steps + 1, N_GAINS))
    uf = np.empty(steps + 1)
    Ph = np.empty((steps + 1, 9))
    _propagate(blk, ss.order, ss.A, ss.B, ss.C, float(h.rz), sig, float(dt), theta, phif, uf, Ph)
    s.load_vector(blk)
    s.check()
    return Propagation(grid[::2].copy(), theta, phif, uf, sig[::2, 4].copy(), Ph.reshape(-1, 3, 3), s)


def random_signal(rng: np.random.Generator, n_tones: int = 4, max_freq: float = 2.0):
    """Bounded multisine test signal for the five regressor channels."""
    amp = rng.uniform(0.2, 1.0, size=(5, n_tones))
    freq = rng.uniform(0.05, max_freq, size=(5, n_tones)) * 2 * np.pi
    phase = rng.uniform(0, 2 * np.pi, size=(5, n_tones))
    offset = rng.uniform(-0.5, 0.5, size=5)

    def signal(t):
        t = np.asarray(t, dtype=float)[:, None, None]
        return offset + np.sum(amp * np.sin(freq * t + phase), axis=2)

    return signal


def oracle_check(h: RcacHyperparams, seeds=range(20), duration: float = 10.0, dt: float = 1e-3, n_checks: int = 10):
    """Largest relative gap between propagated and batch gains over seeded signals."""
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        prop = propagate(h, random_signal(rng), duration, dt)
        idx = np.linspace(0, len(prop.times) - 1, n_checks + 1).round().astype(int)[1:]
        for k in idx:
            ref = batch_oracle(prop.times[: k + 1], prop.phi_f[: k + 1], prop.u_f[: k + 1], prop.z[: k + 1], h)
            err = np.linalg.norm(prop.theta[k] - ref) / np.linalg.norm(ref)
            worst = max(worst, float(err))
    return worst
