"""Gain documents: the 18 controller gains with provenance, as JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .autopilot import INNER_AXES, OUTER_AXES

GAIN_NAMES = ("k_p1", "k_p2", "k_i")


@dataclass
class GainsDocument:
    """Six (k_p1, k_p2, k_i) triples, rows ordered r1 r2 r3 roll pitch yaw."""

    gains: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gains = np.array(self.gains, dtype=float).reshape(6, 3)
        if not np.all(np.isfinite(self.gains)):
            raise ValueError("gains must be finite")

    def to_dict(self) -> dict:
        def block(axes, rows):
            return {ax: dict(zip(GAIN_NAMES, map(float, row))) for ax, row in zip(axes, rows)}

        return {
            "outer": block(OUTER_AXES, self.gains[:3]),
            "inner": block(INNER_AXES, self.gains[3:]),
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: dict) -> GainsDocument:
        rows = []
        for loop, axes in (("outer", OUTER_AXES), ("inner", INNER_AXES)):
            if loop not in data:
                raise ValueError(f"gains document lacks the {loop!r} loop")
            for ax in axes:
                entry = data[loop].get(ax)
                if entry is None:
                    raise ValueError(f"gains document lacks {loop}.{ax}")
                missing = [k for k in GAIN_NAMES if k not in entry]
                if missing:
                    raise ValueError(f"{loop}.{ax}: missing {missing[0]}")
                rows.append([float(entry[k]) for k in GAIN_NAMES])
        return cls(np.array(rows), dict(data.get("metadata", {})))

    def dumps(self) -> str:
        # json writes floats with repr, so the round trip is exact
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def loads(cls, text: str) -> GainsDocument:
        return cls.from_dict(json.loads(text))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path

    @classmethod
    def load(cls, path) -> GainsDocument:
        return cls.loads(Path(path).read_text())


def bundled(name: str) -> GainsDocument:
    """Reference gain sets shipped with the package: ``table2_waypoint`` or ``table2_helix``."""
    ref = resources.files("ctrcac") / "data" / f"{name}.json"
    if not ref.is_file():
        raise KeyError(f"no bundled gain set {name!r}")
    return GainsDocument.loads(ref.read_text())
