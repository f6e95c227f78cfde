"""Freshwater hosing scenarios: a linear ramp followed by a hold."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

DEFAULT_HOLD_YEARS = 2000.0


@dataclass(frozen=True)
class ForcingScenario:
    magnitude: float
    ramp_years: float
    hold_years: float = DEFAULT_HOLD_YEARS
    label: str = ""

    def __post_init__(self):
        if not self.magnitude >= 0:
            raise ConfigError(f"magnitude must be >= 0, got {self.magnitude}")
        if not self.ramp_years > 0:
            raise ConfigError(f"ramp_years must be > 0, got {self.ramp_years}")
        if not self.hold_years >= 0:
            raise ConfigError(f"hold_years must be >= 0, got {self.hold_years}")
        if not self.label:
            object.__setattr__(self, "label", f"{self.magnitude:g}Sv_{self.ramp_years:g}yr")

    @property
    def total_years(self) -> int:
        """Length of the simulated span in whole years."""
        return int(round(self.ramp_years + self.hold_years))

    def knots(self) -> tuple[np.ndarray, np.ndarray]:
        """Piecewise-linear representation used by the compiled integrators."""
        t = np.array([0.0, self.ramp_years, self.ramp_years + self.hold_years])
        h = np.array([0.0, self.magnitude, self.magnitude])
        return t, h

    def to_dict(self) -> dict:
        return {"magnitude": self.magnitude, "ramp_years": self.ramp_years,
                "hold_years": self.hold_years, "label": self.label}


def hosing_at(s: ForcingScenario, t: float) -> float:
    """Hosing in Sv at model time ``t`` (years).

    Rises linearly to ``s.magnitude`` over ``s.ramp_years`` and stays there,
    including after the hold period ends.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return min(t / s.ramp_years, 1.0) * s.magnitude


@dataclass(frozen=True)
class ScenarioGrid:
    magnitudes: tuple
    ramp_times: tuple
    hold_years: float = DEFAULT_HOLD_YEARS

    def __post_init__(self):
        for name in ("magnitudes", "ramp_times"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise ConfigError(f"sweep axis {name!r} is empty")
            if len(set(values)) != len(values):
                raise ConfigError(f"sweep axis {name!r} contains duplicates")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ConfigError(f"sweep axis {name!r} must be strictly increasing")
            object.__setattr__(self, name, values)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.magnitudes), len(self.ramp_times)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioGrid":
        unknown = set(d) - {"magnitudes", "ramp_times", "hold_years"}
        if unknown:
            raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
        return cls(tuple(d["magnitudes"]), tuple(d["ramp_times"]),
                   float(d.get("hold_years", DEFAULT_HOLD_YEARS)))


def scenario_grid(spec: ScenarioGrid) -> list[ForcingScenario]:
    """All grid scenarios, magnitude-major (ramp time varies fastest)."""
    return [ForcingScenario(m, r, spec.hold_years)
            for m in spec.magnitudes for r in spec.ramp_times]


def full_grid_axes() -> tuple[list[float], list[float]]:
    """Magnitude and ramp-time axes of the full published sweep.

    Magnitudes span 0.34-0.46 Sv, refined to 0.005 Sv between 0.36 and 0.43.
    """
    coarse = np.round(np.arange(0.34, 0.4601, 0.01), 3)
    fine = np.round(np.arange(0.36, 0.4301, 0.005), 3)
    mags = sorted(set(coarse.tolist()) | set(fine.tolist()))
    ramps = [float(r) for r in range(50, 1501, 50)]
    return mags, ramps
