"""Smooth compactly supported phantoms for the perturbation fields."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .elastic_tensors import (
    DENSITY_NAMES,
    TI_NAMES,
    DensityPerturbationField,
    SpatialGrid,
    TIPerturbationField,
    isotropic_as_ti,
)

__all__ = ["Bump", "bump_profile", "PhantomSpec", "default_phantom", "constant_ti_field",
           "constant_density_field", "isotropic_field"]


def bump_profile(y):
    """``exp(1 - 1/(1 - y^2))`` on ``|y| < 1``, zero elsewhere; equals 1 at 0."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    m = np.abs(y) < 1
    out[m] = np.exp(1.0 - 1.0 / (1.0 - y[m] ** 2))
    return out


@dataclass(frozen=True)
class Bump:
    """Product bump ``amplitude * prod_j phi((x_j - c_j) / R_j)``."""

    amplitude: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)
    radius: tuple = (0.4, 0.4, 0.4)

    def __call__(self, x, y, z):
        out = self.amplitude * np.ones(np.broadcast(x, y, z).shape)
        for xj, cj, rj in zip((x, y, z), self.center, self.radius):
            out = out * bump_profile((np.asarray(xj) - cj) / rj)
        return out

    def to_dict(self):
        return {"amplitude": self.amplitude, "center": list(self.center),
                "radius": list(self.radius)}

    @classmethod
    def from_dict(cls, d):
        r = d.get("radius", 0.4)
        r = (r, r, r) if np.isscalar(r) else tuple(r)
        return cls(float(d.get("amplitude", 1.0)), tuple(d.get("center", (0, 0, 0))), r)


@dataclass
class PhantomSpec:
    """Named sums of bumps per component.

    ``stiffness`` maps TI component names to bump lists and ``density`` maps
    ``rho11``/``rho33`` likewise; missing components are zero.
    """

    stiffness: Dict[str, List[Bump]] = field(default_factory=dict)
    density: Dict[str, List[Bump]] = field(default_factory=dict)

    def _closure(self, names, table):
        bumps = [list(table.get(n, [])) for n in names]

        def f(x, y, z):
            shp = np.broadcast(x, y, z).shape
            out = np.zeros((len(names),) + shp)
            for i, bl in enumerate(bumps):
                for b in bl:
                    out[i] += b(x, y, z)
            return out
        return f

    def stiffness_field(self, grid: SpatialGrid) -> TIPerturbationField:
        return TIPerturbationField.from_function(grid, self._closure(TI_NAMES, self.stiffness))

    def density_field(self, grid: SpatialGrid) -> Optional[DensityPerturbationField]:
        if not self.density:
            return None
        return DensityPerturbationField.from_function(
            grid, self._closure(DENSITY_NAMES, self.density))

    def scaled(self, a: float) -> "PhantomSpec":
        sc = lambda tab: {k: [Bump(a * b.amplitude, b.center, b.radius) for b in v]
                          for k, v in tab.items()}
        return PhantomSpec(sc(self.stiffness), sc(self.density))

    def to_dict(self):
        return {"stiffness": {k: [b.to_dict() for b in v] for k, v in self.stiffness.items()},
                "density": {k: [b.to_dict() for b in v] for k, v in self.density.items()}}

    @classmethod
    def from_dict(cls, d):
        conv = lambda tab, names: {k: [Bump.from_dict(b) for b in v] for k, v in tab.items()
                                   if _known(k, names)}
        return cls(conv(d.get("stiffness", {}), TI_NAMES), conv(d.get("density", {}),
                                                                DENSITY_NAMES))


def _known(name, names):
    if name not in names:
        raise ValueError(f"unknown phantom component {name!r}")
    return True


def default_phantom(with_density: bool = False) -> PhantomSpec:
    """Five distinct bumps (and two density bumps) inside the unit cube."""
    st = {
        "c1111": [Bump(1.0, (0.05, -0.03, 0.02), (0.40, 0.40, 0.40))],
        "c1122": [Bump(0.6, (-0.06, 0.04, 0.00), (0.38, 0.40, 0.36))],
        "c1133": [Bump(0.8, (0.02, 0.06, -0.05), (0.40, 0.36, 0.40))],
        "c1313": [Bump(0.5, (-0.03, -0.05, 0.04), (0.36, 0.40, 0.40))],
        "c3333": [Bump(1.2, (0.04, 0.02, 0.06), (0.40, 0.38, 0.38))],
    }
    dens = {}
    if with_density:
        dens = {
            "rho11": [Bump(0.7, (0.03, -0.04, -0.03), (0.40, 0.40, 0.38))],
            "rho33": [Bump(0.9, (-0.04, 0.03, 0.05), (0.38, 0.40, 0.40))],
        }
    return PhantomSpec(st, dens)


def constant_ti_field(grid: SpatialGrid, p) -> TIPerturbationField:
    p = np.asarray(p, dtype=float)
    return TIPerturbationField.from_function(
        grid, lambda x, y, z: np.multiply.outer(p, np.ones(np.broadcast(x, y, z).shape)))


def constant_density_field(grid: SpatialGrid, rho) -> DensityPerturbationField:
    rho = np.asarray(rho, dtype=float)
    return DensityPerturbationField.from_function(
        grid, lambda x, y, z: np.multiply.outer(rho, np.ones(np.broadcast(x, y, z).shape)))


def isotropic_field(grid: SpatialGrid, lam, mu) -> TIPerturbationField:
    """TI field of an isotropic perturbation; ``lam`` and ``mu`` are callables."""
    return TIPerturbationField.from_function(
        grid, lambda x, y, z: isotropic_as_ti(lam(x, y, z), mu(x, y, z)))
