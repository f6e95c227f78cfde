"""Model constants for the three-box AMOC model and their JSON representation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError

#: cubic metres per model year in one Sverdrup
SV = 3.15576e13

_C_RTOL = 1e-12

# JSON key -> attribute name (``lambda`` is reserved in Python)
_KEY_TO_ATTR = {"lambda": "lam"}
_ATTR_TO_KEY = {v: k for k, v in _KEY_TO_ATTR.items()}


@dataclass(frozen=True)
class ModelParams:
    lam: float
    alpha: float
    beta: float
    T_S: float
    T_Nor: float
    S_S: float
    S_B: float
    V_Nor: float
    V_Trop: float
    V_S: float
    V_IP: float
    V_B: float
    K_Nor: float
    K_S: float
    gamma: float
    F_Nor_base: float
    F_Trop_base: float
    a_Nor: float
    a_Trop: float
    S0: float
    C: float
    B: tuple = ((0.0, 0.0), (0.0, 0.0))
    reference_state: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("V_Nor", "V_Trop", "V_S", "V_IP", "V_B"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive, got {getattr(self, name)}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.S0 != 35.0:
            raise ConfigError(f"S0 must be 35 psu, got {self.S0}")
        B = np.asarray(self.B, dtype=float)
        if B.shape != (2, 2) or not np.all(np.isfinite(B)):
            raise ConfigError("B must be a finite 2x2 matrix")
        object.__setattr__(self, "B", tuple(map(tuple, B.tolist())))
        if self.reference_state:
            ref = self.reference_state
            c_ref = (self.V_Nor * ref["S_Nor"] + self.V_Trop * ref["S_Trop"]
                     + self.V_S * self.S_S + self.V_IP * ref["S_IP"] + self.V_B * self.S_B)
            if abs(c_ref - self.C) > _C_RTOL * abs(self.C):
                raise ConfigError(
                    f"C={self.C!r} does not match the salt content {c_ref!r} at reference_state")

    @property
    def noise_matrix(self) -> np.ndarray:
        return np.array(self.B, dtype=float)

    def replace(self, **changes) -> "ModelParams":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return ModelParams(**d)

    def vector(self) -> np.ndarray:
        """Flat float64 array consumed by the compiled kernels (see ``model.P_*``)."""
        return np.array([
            self.lam, self.alpha, self.beta, self.T_S, self.T_Nor, self.S_S, self.S_B,
            self.V_Nor, self.V_Trop, self.V_S, self.V_IP, self.V_B,
            self.K_Nor, self.K_S, self.gamma, self.F_Nor_base, self.F_Trop_base,
            self.a_Nor, self.a_Trop, self.S0, self.C, SV,
        ], dtype=np.float64)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "B":
                value = [list(row) for row in value]
            out[_ATTR_TO_KEY.get(f.name, f.name)] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        try:
            jsonschema.validate(data, _schema())
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid model parameters: {exc.message}") from None
        kwargs = {_KEY_TO_ATTR.get(k, k): v for k, v in data.items()}
        return cls(**kwargs)


def _schema() -> dict:
    text = resources.files("amoctip.data").joinpath("params.schema.json").read_text()
    return json.loads(text)


def load_params(path: str | Path | None = None) -> ModelParams:
    """Load parameters from ``path``, or the shipped defaults when ``path`` is None."""
    if path is None:
        text = resources.files("amoctip.data").joinpath("default_params.json").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read parameter file {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parameter file is not valid JSON: {exc}") from None
    return ModelParams.from_dict(data)


def default_params() -> ModelParams:
    return load_params(None)
