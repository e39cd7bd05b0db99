"""Experiment configuration shared by the command-line subcommands."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

from .dn_form import QuadratureSpec
from .elastic_tensors import IsotropicBackground, SpatialGrid
from .phantoms import PhantomSpec, default_phantom

__all__ = ["ExperimentConfig", "ConfigError", "OUT_ENV"]

OUT_ENV = "TICGO_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One JSON file describing a full experiment.

    ``omegas`` is ``[0]`` for the zero-frequency pipeline or at least two
    distinct positive frequencies. The spatial grid and the frequency grid
    share ``shape``.
    """

    lambda0: float = 1.0
    mu0: float = 1.0
    rho0: float = 1.0
    omegas: List[float] = field(default_factory=lambda: [0.0])
    center: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    half_widths: List[float] = field(default_factory=lambda: [0.5, 0.5, 0.5])
    shape: List[int] = field(default_factory=lambda: [16, 16, 16])
    phantom: Optional[dict] = None
    quad_rule: str = "gauss"
    quad_points: int = 48
    r_sweep: List[float] = field(default_factory=lambda: [8, 11, 16, 22, 32, 45, 64, 90])
    r_near: List[float] = field(default_factory=lambda: [1.25, 1.5, 2.0, 3.0])
    eta: float = 1e-3
    out: str = "out"
    seed: int = 0
    verify_points: int = 1000
    verify_nodes: int = 20

    def __post_init__(self):
        try:
            self.background()
            self.grid()
            self.quadrature()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if len(set(self.omegas)) != len(self.omegas) or not self.omegas:
            raise ConfigError("omegas must be a non-empty list of distinct values")
        if any(w < 0 for w in self.omegas):
            raise ConfigError("omegas must be non-negative")
        if self.phantom is not None:
            try:
                PhantomSpec.from_dict(self.phantom)
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"bad phantom: {exc}") from exc

    # --- derived objects
    def background(self) -> IsotropicBackground:
        return IsotropicBackground(self.lambda0, self.mu0, self.rho0)

    def grid(self) -> SpatialGrid:
        return SpatialGrid(tuple(self.center), tuple(self.half_widths), tuple(self.shape))

    def quadrature(self) -> QuadratureSpec:
        return QuadratureSpec(self.quad_rule, self.quad_points)

    def phantom_spec(self) -> PhantomSpec:
        if self.phantom is None:
            return default_phantom(with_density=max(self.omegas) > 0)
        return PhantomSpec.from_dict(self.phantom)

    def out_dir(self, override: Optional[str] = None) -> Path:
        return Path(override or os.environ.get(OUT_ENV) or self.out)

    # --- serialization
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def dump(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path
