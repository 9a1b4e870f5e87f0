"""Scenario configuration: schema, defaults, validation and loading."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .lti_filter import TransferFunction
from .rcac import DEFAULT_HYPERPARAMS, RcacHyperparams
from .rigid_body import VehicleParams


class ConfigError(ValueError):
    """Configuration failed validation; the message names the offending field path."""


@dataclass(frozen=True)
class TargetPerturbations:
    """Software analogue of a higher-fidelity target plant.

    ``meas_noise_sigma`` holds one standard deviation per measurement group:
    position (m), velocity (m/s), attitude (rad), body rate (rad/s).
    ``sensor_rate=None`` samples continuously (no zero-order hold).
    """

    meas_noise_sigma: tuple = (0.005, 0.01, 0.002, 0.005)
    meas_delay: float = 0.02
    sensor_rate: float | None = 250.0
    actuator_tau: float = 0.02
    mass_scale: float = 1.0
    inertia_scale: float = 1.0

    def __post_init__(self):
        sigma = tuple(float(s) for s in self.meas_noise_sigma)
        object.__setattr__(self, "meas_noise_sigma", sigma)
        if len(sigma) != 4 or any(not (s >= 0) for s in sigma):
            raise ConfigError("target.meas_noise_sigma: need 4 non-negative values")
        for name in ("meas_delay", "actuator_tau"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"target.{name}: must be non-negative")
        for name in ("mass_scale", "inertia_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"target.{name}: must be positive")
        if self.sensor_rate is not None and not self.sensor_rate > 0:
            raise ConfigError("target.sensor_rate: must be positive (or null for continuous sampling)")

    @classmethod
    def none(cls) -> TargetPerturbations:
        return cls((0.0, 0.0, 0.0, 0.0), 0.0, None, 0.0, 1.0, 1.0)

    @property
    def samples_measurements(self) -> bool:
        return any(s > 0 for s in self.meas_noise_sigma) or self.meas_delay > 0 or self.sensor_rate is not None


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    method: str = "rk4"

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"integrator.dt: must be positive, got {self.dt}")
        if self.method != "rk4":
            raise ConfigError(f"integrator.method: only 'rk4' is supported, got {self.method!r}")


@dataclass(frozen=True)
class Trajectory:
    kind: str = "waypoint"
    target: tuple = (1.0, 1.0, 1.0)
    omega: float = 0.1
    table: tuple | None = None  # rows of (t, r1, r2, r3[, psi])

    def __post_init__(self):
        if self.kind not in ("waypoint", "helix", "custom"):
            raise ConfigError(f"trajectory.kind: unknown trajectory {self.kind!r}")
        if len(self.target) != 3 or not all(math.isfinite(v) for v in self.target):
            raise ConfigError("trajectory.target: need 3 finite values")
        if self.kind == "helix" and not self.omega > 0:
            raise ConfigError("trajectory.omega: must be positive")
        if self.kind == "custom":
            if not self.table:
                raise ConfigError("trajectory.table: custom trajectories need a sample table")
            arr = np.asarray(self.table, dtype=float)
            if arr.ndim != 2 or arr.shape[1] not in (4, 5) or arr.shape[0] < 1:
                raise ConfigError("trajectory.table: rows must be (t, r1, r2, r3[, psi])")
            if np.any(np.diff(arr[:, 0]) <= 0):
                raise ConfigError("trajectory.table: times must be strictly increasing")


@dataclass(frozen=True)
class AutopilotConfig:
    tilt_limit_deg: float = 60.0
    eps_force: float = 1e-6
    thrust_limit_mg: float | None = 4.0  # |f| <= thrust_limit_mg * m * g
    torque_limit: float | None = 1.0
    integral_clamp: float | None = None
    gravity_feedforward: bool = False
    yaw_ref: float = 0.0
    z_up: bool = False
    learn_applied: bool = False

    def __post_init__(self):
        if not 0 < self.tilt_limit_deg <= 90:
            raise ConfigError("autopilot.tilt_limit_deg: must lie in (0, 90]")
        for name in ("thrust_limit_mg", "torque_limit", "integral_clamp"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"autopilot.{name}: must be positive or null")


LOOP_KEYS = ("outer_xy", "outer_z", "inner")


@dataclass(frozen=True)
class ScenarioConfig:
    trajectory: Trajectory = field(default_factory=Trajectory)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    duration: float = 100.0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    mode: str = "learn"
    hyperparams: dict = field(default_factory=lambda: dict(DEFAULT_HYPERPARAMS))
    initial_gains: tuple | None = None  # 6x3, rows r1 r2 r3 roll pitch yaw
    gains_file: str | None = None
    environment: str = "source"
    target: TargetPerturbations = field(default_factory=TargetPerturbations)
    autopilot: AutopilotConfig = field(default_factory=AutopilotConfig)
    seed: int = 0
    out: str | None = None
    log_rate: float = 100.0
    renormalize: bool = True
    initial_position: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.duration >= 0 and math.isfinite(self.duration)):
            raise ConfigError(f"duration: must be non-negative, got {self.duration}")
        if self.mode not in ("learn", "fly"):
            raise ConfigError(f"mode: expected 'learn' or 'fly', got {self.mode!r}")
        if self.environment not in ("source", "target"):
            raise ConfigError(f"environment: expected 'source' or 'target', got {self.environment!r}")
        if set(self.hyperparams) != set(LOOP_KEYS):
            raise ConfigError(f"hyperparams: need exactly the keys {LOOP_KEYS}")
        if self.mode == "fly" and self.initial_gains is None and self.gains_file is None:
            raise ConfigError("gains_file: fly mode requires learned gains")
        if self.initial_gains is not None and np.asarray(self.initial_gains, dtype=float).shape != (6, 3):
            raise ConfigError("initial_gains: need a 6x3 table")
        if not self.log_rate > 0:
            raise ConfigError("log_rate: must be positive")
        if self.environment == "target":
            dt = self.integrator.dt
            tp = self.target
            if tp.meas_delay > 0 and dt > tp.meas_delay + 1e-15:
                raise ConfigError("integrator.dt: must not exceed target.meas_delay")
            if tp.sensor_rate is not None and dt > 1.0 / tp.sensor_rate + 1e-15:
                raise ConfigError("integrator.dt: must not exceed the sensor period")

    @property
    def perturbations(self) -> TargetPerturbations:
        return self.target if self.environment == "target" else TargetPerturbations.none()

    def to_dict(self) -> dict:
        return {
            "trajectory": {
                "kind": self.trajectory.kind,
                "target": list(self.trajectory.target),
                "omega": self.trajectory.omega,
                "table": None if self.trajectory.table is None else [list(r) for r in self.trajectory.table],
            },
            "vehicle": {"m": self.vehicle.m, "J": self.vehicle.J.tolist(), "g": self.vehicle.g},
            "duration": self.duration,
            "integrator": {"dt": self.integrator.dt, "method": self.integrator.method},
            "mode": self.mode,
            "hyperparams": {k: self.hyperparams[k].to_dict() for k in LOOP_KEYS},
            "initial_gains": None if self.initial_gains is None else [list(r) for r in self.initial_gains],
            "gains_file": self.gains_file,
            "environment": self.environment,
            "target": {
                "meas_noise_sigma": list(self.target.meas_noise_sigma),
                "meas_delay": self.target.meas_delay,
                "sensor_rate": self.target.sensor_rate,
                "actuator_tau": self.target.actuator_tau,
                "mass_scale": self.target.mass_scale,
                "inertia_scale": self.target.inertia_scale,
            },
            "autopilot": {
                "tilt_limit_deg": self.autopilot.tilt_limit_deg,
                "eps_force": self.autopilot.eps_force,
                "thrust_limit_mg": self.autopilot.thrust_limit_mg,
                "torque_limit": self.autopilot.torque_limit,
                "integral_clamp": self.autopilot.integral_clamp,
                "gravity_feedforward": self.autopilot.gravity_feedforward,
                "yaw_ref": self.autopilot.yaw_ref,
                "z_up": self.autopilot.z_up,
                "learn_applied": self.autopilot.learn_applied,
            },
            "seed": self.seed,
            "out": self.out,
            "log_rate": self.log_rate,
            "renormalize": self.renormalize,
            "initial_position": list(self.initial_position),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------- loading

_SECTIONS = {
    "trajectory": {"kind", "target", "omega", "table"},
    "vehicle": {"m", "J", "g"},
    "integrator": {"dt", "method"},
    "target": {"meas_noise_sigma", "meas_delay", "sensor_rate", "actuator_tau", "mass_scale", "inertia_scale"},
    "autopilot": {
        "tilt_limit_deg", "eps_force", "thrust_limit_mg", "torque_limit",
        "integral_clamp", "gravity_feedforward", "yaw_ref", "z_up", "learn_applied",
    },
}
_SCALARS = {
    "duration", "mode", "hyperparams", "initial_gains", "gains_file", "environment",
    "seed", "out", "log_rate", "renormalize", "initial_position",
}


def _check_keys(path: str, data: Any, allowed: set) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key" if path else f"{unknown[0]}: unknown key")


def _hyperparams(data: dict) -> dict:
    _check_keys("hyperparams", data, set(LOOP_KEYS))
    out = dict(DEFAULT_HYPERPARAMS)
    for key, row in data.items():
        _check_keys(f"hyperparams.{key}", row, {"gf", "rz", "p0"})
        base = DEFAULT_HYPERPARAMS[key]
        try:
            gf = base.gf
            if "gf" in row:
                _check_keys(f"hyperparams.{key}.gf", row["gf"], {"num", "den"})
                gf = TransferFunction(tuple(row["gf"]["num"]), tuple(row["gf"]["den"]))
            out[key] = RcacHyperparams(gf, float(row.get("rz", base.rz)), float(row.get("p0", base.p0)))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"hyperparams.{key}: {exc}") from exc
    return out


def config_from_dict(data: dict, **overrides) -> ScenarioConfig:
    """Builds a validated config; anything not given takes its default."""
    data = copy.deepcopy(data)
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    _check_keys("", data, _SCALARS | set(_SECTIONS))
    kwargs: dict[str, Any] = {}
    try:
        for section, keys in _SECTIONS.items():
            if section not in data:
                continue
            raw = data[section]
            _check_keys(section, raw, keys)
            if section == "trajectory":
                raw = dict(raw)
                if "target" in raw:
                    raw["target"] = tuple(float(v) for v in raw["target"])
                if raw.get("table") is not None:
                    raw["table"] = tuple(tuple(float(v) for v in row) for row in raw["table"])
                kwargs[section] = Trajectory(**raw)
            elif section == "vehicle":
                kwargs[section] = VehicleParams(**raw)
            elif section == "integrator":
                kwargs[section] = IntegratorConfig(**raw)
            elif section == "target":
                kwargs[section] = TargetPerturbations(**raw)
            else:
                kwargs[section] = AutopilotConfig(**raw)
        for key in _SCALARS:
            if key in data:
                kwargs[key] = data[key]
        if "hyperparams" in kwargs:
            kwargs["hyperparams"] = _hyperparams(kwargs["hyperparams"])
        if kwargs.get("initial_gains") is not None:
            kwargs["initial_gains"] = tuple(tuple(float(v) for v in row) for row in kwargs["initial_gains"])
        if "initial_position" in kwargs:
            kwargs["initial_position"] = tuple(float(v) for v in kwargs["initial_position"])
        for key in ("duration", "log_rate"):
            if key in kwargs:
                kwargs[key] = float(kwargs[key])
        if "seed" in kwargs:
            kwargs["seed"] = int(kwargs["seed"])
        return ScenarioConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def read_mapping(path) -> dict:
    """Parses a JSON (or YAML, by suffix) file into a plain mapping."""
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        return yaml.safe_load(text) or {}
    return json.loads(text) if text.strip() else {}


def load_config(path, **overrides) -> ScenarioConfig:
    """Loads a scenario file and validates it."""
    return config_from_dict(read_mapping(path), **overrides)


def write_resolved(cfg: ScenarioConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "resolved_config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
