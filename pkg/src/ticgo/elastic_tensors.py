"""Elastic stiffness tensors, density matrices and transversely isotropic fields.

The symmetry axis is fixed to x3. Tensors are stored as full 3x3x3x3 arrays;
every write goes through all minor/major symmetry images so the symmetry
relations hold bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import permutations
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.ndimage import map_coordinates

__all__ = [
    "IsotropicBackground",
    "StiffnessTensor",
    "TIComponents",
    "SpatialGrid",
    "TIPerturbationField",
    "DensityPerturbationField",
    "TI_NAMES",
    "RECON_NAMES",
    "DENSITY_NAMES",
    "RAW_FROM_RECON",
    "ti_expand",
    "ti_basis",
    "recon_basis",
    "isotropic_expand",
    "isotropic_as_ti",
    "rotation_x3",
    "rotate_tensor",
    "check_ti_invariance",
    "contract",
    "positivity_margin",
]

TI_NAMES = ("c1111", "c1122", "c1133", "c1313", "c3333")
# Basis used by the staged reconstruction: C1313, C1111-C1122,
# C1111-2C1133+C3333, C1133-C1111 and C1111.
RECON_NAMES = ("c1313", "m1", "m2", "cdiff", "c1111")
DENSITY_NAMES = ("rho11", "rho33")

# raw = RAW_FROM_RECON @ recon, rows in TI_NAMES order, columns in RECON_NAMES order
RAW_FROM_RECON = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 1.0],
        [0.0, -1.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 1.0, 1.0],
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 2.0, 1.0],
    ]
)


@dataclass(frozen=True)
class IsotropicBackground:
    """Homogeneous isotropic background medium and frequency.

    Parameters
    ----------
    lambda0, mu0 : float
        Lame parameters, with ``mu0 > 0`` and ``3 lambda0 + 2 mu0 > 0``.
    rho0 : float
        Background density, positive.
    omega : float
        Angular frequency, non-negative.
    """

    lambda0: float = 1.0
    mu0: float = 1.0
    rho0: float = 1.0
    omega: float = 0.0

    def __post_init__(self):
        if not self.mu0 > 0 or not 3 * self.lambda0 + 2 * self.mu0 > 0:
            raise ValueError("Lame parameters violate mu0 > 0, 3 lambda0 + 2 mu0 > 0")
        if not self.rho0 > 0:
            raise ValueError("rho0 must be positive")
        if not self.omega >= 0:
            raise ValueError("omega must be non-negative")

    @property
    def ks2(self) -> float:
        """Squared shear wave number omega^2 rho0 / mu0."""
        return self.omega**2 * self.rho0 / self.mu0

    @property
    def kp2(self) -> float:
        """Squared compressional wave number omega^2 rho0 / (lambda0 + 2 mu0)."""
        return self.omega**2 * self.rho0 / (self.lambda0 + 2 * self.mu0)

    def with_omega(self, omega: float) -> "IsotropicBackground":
        return IsotropicBackground(self.lambda0, self.mu0, self.rho0, float(omega))

    def same_medium(self, other: "IsotropicBackground") -> bool:
        return (self.lambda0, self.mu0, self.rho0, self.omega) == (
            other.lambda0, other.mu0, other.rho0, other.omega)


def _symmetry_images(i, j, k, l):
    out = set()
    for a, b in ((i, j), (j, i)):
        for c, d in ((k, l), (l, k)):
            out.add((a, b, c, d))
            out.add((c, d, a, b))
    return out


class StiffnessTensor:
    """Rank-4 tensor with the minor and major symmetries.

    Parameters
    ----------
    components : array_like, shape (3, 3, 3, 3)
        Full component array. It is symmetrized by averaging over the
        symmetry group; an input that is not symmetric within ``sym_tol``
        is rejected.
    """

    __slots__ = ("_c",)

    def __init__(self, components, sym_tol: float = 1e-12):
        c = np.array(components, dtype=float)
        if c.shape != (3, 3, 3, 3):
            raise ValueError("stiffness tensor must have shape (3, 3, 3, 3)")
        sym = (c + c.transpose(1, 0, 2, 3) + c.transpose(0, 1, 3, 2)
               + c.transpose(1, 0, 3, 2))
        sym = 0.125 * (sym + sym.transpose(2, 3, 0, 1))
        scale = max(1.0, np.abs(c).max())
        if np.abs(sym - c).max() > sym_tol * scale:
            raise ValueError("components violate the minor/major symmetries")
        sym.setflags(write=False)
        self._c = sym

    @classmethod
    def from_entries(cls, entries: dict) -> "StiffnessTensor":
        """Build from a mapping ``(i, j, k, l) -> value`` (zero-based).

        Each entry is written through to all of its symmetry images.
        """
        c = np.zeros((3, 3, 3, 3))
        for idx, val in entries.items():
            for img in _symmetry_images(*idx):
                c[img] = val
        return cls(c)

    @classmethod
    def zeros(cls) -> "StiffnessTensor":
        return cls(np.zeros((3, 3, 3, 3)))

    @property
    def components(self) -> np.ndarray:
        return self._c

    def __getitem__(self, idx):
        return self._c[idx]

    def __call__(self, label: str) -> float:
        """Component by one-based label, e.g. ``C('1212')``."""
        i, j, k, l = (int(ch) - 1 for ch in label)
        return float(self._c[i, j, k, l])

    def __add__(self, other):
        return StiffnessTensor(self._c + other.components)

    def __mul__(self, a):
        return StiffnessTensor(a * self._c)

    __rmul__ = __mul__

    def allclose(self, other, atol=1e-12) -> bool:
        return bool(np.allclose(self._c, other.components, rtol=0, atol=atol))

    def __repr__(self):
        return f"StiffnessTensor(max|C|={np.abs(self._c).max():.3g})"


@dataclass(frozen=True)
class TIComponents:
    """The five independent components of a TI tensor with axis x3."""

    c1111: float = 0.0
    c1122: float = 0.0
    c1133: float = 0.0
    c1313: float = 0.0
    c3333: float = 0.0

    @classmethod
    def from_array(cls, a) -> "TIComponents":
        return cls(*(float(v) for v in np.asarray(a, dtype=float)))

    def as_array(self) -> np.ndarray:
        return np.array([self.c1111, self.c1122, self.c1133, self.c1313, self.c3333])

    # components fixed by the four linear relations
    @property
    def c2222(self):
        return self.c1111

    @property
    def c2233(self):
        return self.c1133

    @property
    def c2323(self):
        return self.c1313

    @property
    def c1212(self):
        return 0.5 * (self.c1111 - self.c1122)

    def to_recon(self) -> np.ndarray:
        """Coordinates in the reconstruction basis (RECON_NAMES order)."""
        return np.linalg.solve(RAW_FROM_RECON, self.as_array())


def ti_expand(p) -> StiffnessTensor:
    """Full tensor of a transversely isotropic parameter set.

    Parameters
    ----------
    p : TIComponents or sequence of 5 floats
        ``(c1111, c1122, c1133, c1313, c3333)``.
    """
    if not isinstance(p, TIComponents):
        p = TIComponents.from_array(p)
    e = {
        (0, 0, 0, 0): p.c1111,
        (1, 1, 1, 1): p.c2222,
        (2, 2, 2, 2): p.c3333,
        (0, 0, 1, 1): p.c1122,
        (0, 0, 2, 2): p.c1133,
        (1, 1, 2, 2): p.c2233,
        (0, 1, 0, 1): p.c1212,
        (0, 2, 0, 2): p.c1313,
        (1, 2, 1, 2): p.c2323,
    }
    return StiffnessTensor.from_entries(e)


@lru_cache(maxsize=None)
def _ti_basis_cached() -> np.ndarray:
    out = np.stack([ti_expand(np.eye(5)[q]).components for q in range(5)])
    out.setflags(write=False)
    return out


def ti_basis() -> np.ndarray:
    """Tensors of the unit TI parameter vectors, shape (5, 3, 3, 3, 3)."""
    return _ti_basis_cached().copy()


def recon_basis() -> np.ndarray:
    """Tensors multiplying each reconstruction-basis field, shape (5, 3, 3, 3, 3)."""
    return np.einsum("rq,rijkl->qijkl", RAW_FROM_RECON, ti_basis())


def isotropic_expand(lam: float, mu: float) -> StiffnessTensor:
    """``lam d_ij d_kl + mu (d_ik d_jl + d_il d_jk)``."""
    d = np.eye(3)
    c = (lam * np.einsum("ij,kl->ijkl", d, d)
         + mu * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d)))
    return StiffnessTensor(c)


def isotropic_as_ti(lam, mu) -> np.ndarray:
    """TI parameters of an isotropic tensor; works elementwise on arrays."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return np.stack([lam + 2 * mu, lam, lam, mu, lam + 2 * mu])


def rotation_x3(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_tensor(C: StiffnessTensor, Q, tol: float = 1e-10) -> StiffnessTensor:
    """Return ``Q_ip Q_jq Q_kr Q_ls C_pqrs``; ``Q`` must be orthogonal."""
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (3, 3) or np.abs(Q.T @ Q - np.eye(3)).max() > tol:
        raise ValueError("rotation matrix is not orthogonal")
    c = np.einsum("ip,jq,kr,ls,pqrs->ijkl", Q, Q, Q, Q, C.components, optimize=True)
    return StiffnessTensor(c, sym_tol=1e-9)


def check_ti_invariance(C: StiffnessTensor, tol: float = 1e-12) -> bool:
    """True when ``C`` is invariant under the x3-axis symmetry group sample.

    The sample holds the three coordinate reflections and twelve rotations
    about x3 (including quarter turns).
    """
    mats = [np.diag(v) for v in ((-1.0, 1, 1), (1, -1.0, 1), (1, 1, -1.0))]
    angles = np.concatenate([np.arange(1, 9) * np.pi / 4, [0.3, 0.7, 1.1, 2.9]])
    mats += [rotation_x3(a) for a in angles]
    scale = max(1.0, np.abs(C.components).max())
    for Q in mats:
        if np.abs(rotate_tensor(C, Q).components - C.components).max() > tol * scale:
            return False
    return True


def contract(C, G, H):
    """``sum C_ijkl G_ij H_kl`` for 3x3 (complex) matrices ``G`` and ``H``."""
    c = C.components if isinstance(C, StiffnessTensor) else np.asarray(C)
    return np.einsum("ijkl,ij,kl->", c, np.asarray(G), np.asarray(H))


def _sym_basis():
    out = []
    for a in range(3):
        e = np.zeros((3, 3))
        e[a, a] = 1.0
        out.append(e)
    for a, b in ((1, 2), (0, 2), (0, 1)):
        e = np.zeros((3, 3))
        e[a, b] = e[b, a] = 1 / np.sqrt(2)
        out.append(e)
    return np.array(out)


def positivity_margin(C: StiffnessTensor) -> float:
    """Minimum of ``C:eps:eps`` over unit Frobenius norm symmetric ``eps``."""
    E = _sym_basis()
    M = np.einsum("aij,ijkl,bkl->ab", E, C.components, E)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


@dataclass(frozen=True)
class SpatialGrid:
    """Axis-aligned box sampled on a periodic-style node lattice.

    Node ``n`` along axis ``j`` sits at ``center_j - w_j + n * 2 w_j / N_j``,
    which is the lattice of the discrete Fourier transform on the box.
    """

    center: tuple = (0.0, 0.0, 0.0)
    half_widths: tuple = (0.5, 0.5, 0.5)
    shape: tuple = (16, 16, 16)

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "half_widths", tuple(float(v) for v in self.half_widths))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))
        if len(self.center) != 3 or len(self.half_widths) != 3 or len(self.shape) != 3:
            raise ValueError("grid needs three axes")
        if min(self.half_widths) <= 0:
            raise ValueError("half-widths must be positive")
        if min(self.shape) < 2:
            raise ValueError("need at least two nodes per axis")

    @property
    def lengths(self) -> np.ndarray:
        return 2 * np.asarray(self.half_widths)

    @property
    def spacing(self) -> np.ndarray:
        return self.lengths / np.asarray(self.shape)

    @property
    def origin(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.half_widths)

    def axes(self):
        return [self.origin[j] + self.spacing[j] * np.arange(self.shape[j]) for j in range(3)]

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def contains(self, x, tol=1e-12) -> np.ndarray:
        x = np.asarray(x)
        lo = np.asarray(self.center) - np.asarray(self.half_widths) - tol
        hi = np.asarray(self.center) + np.asarray(self.half_widths) + tol
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def to_dict(self):
        return {"center": list(self.center), "half_widths": list(self.half_widths),
                "shape": list(self.shape)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["center"]), tuple(d["half_widths"]), tuple(d["shape"]))


def _interp_nodal(grid: SpatialGrid, values: np.ndarray, x, y, z) -> np.ndarray:
    # fractional node indices, periodic wrap matching the node lattice
    coords = [(np.asarray(c, dtype=float) - grid.origin[j]) / grid.spacing[j]
              for j, c in enumerate((x, y, z))]
    shp = np.broadcast(*coords).shape
    coords = np.stack([np.broadcast_to(c, shp).ravel() for c in coords])
    out = [map_coordinates(v, coords, order=1, mode="grid-wrap").reshape(shp) for v in values]
    return np.stack(out)


class _NodalField:
    names: tuple = ()

    def __init__(self, grid: SpatialGrid, values, exact: Optional[Callable] = None):
        values = np.array(values, dtype=float)
        if values.shape != (len(self.names),) + grid.shape:
            raise ValueError(f"values must have shape {(len(self.names),) + grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.exact = exact

    @classmethod
    def from_function(cls, grid: SpatialGrid, func: Callable):
        """Sample ``func(x, y, z) -> array (ncomp, ...)`` on the grid and keep it as exact closure."""
        X, Y, Z = grid.mesh()
        return cls(grid, np.asarray(func(X, Y, Z)), exact=func)

    @classmethod
    def zeros(cls, grid: SpatialGrid):
        return cls(grid, np.zeros((len(cls.names),) + grid.shape),
                   exact=lambda x, y, z: np.zeros((len(cls.names),) + np.broadcast(x, y, z).shape))

    def evaluate(self, x, y, z, use_exact: bool = True) -> np.ndarray:
        """Component values at points; exact closure if present, else trilinear."""
        if use_exact and self.exact is not None:
            shp = np.broadcast(x, y, z).shape
            return np.broadcast_to(np.asarray(self.exact(x, y, z), dtype=float),
                                   (len(self.names),) + shp)
        return _interp_nodal(self.grid, self.values, x, y, z)

    def component(self, name: str) -> np.ndarray:
        return self.values[self.names.index(name)]

    def scaled(self, a: float):
        ex = self.exact
        return type(self)(self.grid, a * self.values,
                          exact=None if ex is None else (lambda x, y, z: a * np.asarray(ex(x, y, z))))

    def is_zero(self) -> bool:
        return not np.any(self.values) and self.exact is None


class TIPerturbationField(_NodalField):
    """Five TI stiffness components sampled on a :class:`SpatialGrid`."""

    names = TI_NAMES

    def tensor_at(self, x) -> StiffnessTensor:
        p = self.evaluate(*np.asarray(x, dtype=float))
        return ti_expand(np.ravel(p))


class DensityPerturbationField(_NodalField):
    """Density perturbation ``diag(rho11, rho11, rho33)`` on a grid."""

    names = DENSITY_NAMES

    def matrix_at(self, x) -> np.ndarray:
        r11, r33 = np.ravel(self.evaluate(*np.asarray(x, dtype=float)))
        return np.diag([r11, r11, r33])
