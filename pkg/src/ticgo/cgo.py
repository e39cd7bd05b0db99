"""Complex geometrical optics solutions of the isotropic Navier system.

Every solution has the form ``A(x) exp(zeta . x)`` with either a constant
amplitude ``a`` or an affine amplitude ``(b . x) zeta_hat + c``. Derivatives
and the Navier residual are evaluated in closed form. The ``*_envelope``
methods return quantities with the exponential factor removed, which is what
the pair integrands need (the two exponentials combine to a bounded phase).

Conventions: ``zeta . zeta = -k^2`` for both wave types,
``k_s^2 = omega^2 rho0 / mu0`` and ``k_p^2 = omega^2 rho0 / (lambda0 + 2 mu0)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace
from typing import Optional, Tuple, Union

import numpy as np

from .elastic_tensors import IsotropicBackground, rotation_x3

__all__ = [
    "CgoError",
    "EvanescentError",
    "ConstantAmplitude",
    "AffineAmplitude",
    "CgoSolution",
    "PairConfig",
    "PAIR_KINDS",
    "phase_pair_A",
    "phase_pair_B",
    "phase_pair_F",
    "amplitude_theta",
    "affine_amplitude",
    "make_pair",
    "rotate_about_x3",
    "node_from_frequency",
    "frequency_from_node",
    "relative_residual",
    "eval_displacement",
    "eval_gradient",
    "eval_divergence",
    "navier_residual",
]

PAIR_KINDS = ("A_shear", "B_gradient", "C_affine_right", "D_affine_both", "E_theta",
              "F_grad_theta")


class CgoError(ValueError):
    """Invalid CGO construction request."""


class EvanescentError(CgoError):
    """Frequency node inside the evanescent disk of a positive frequency."""


def _cdot(a, b):
    # bilinear (non-conjugating) dot product
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def _cvec(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise CgoError("expected a finite complex 3-vector")
    return v


@dataclass(frozen=True)
class ConstantAmplitude:
    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", _cvec(self.a))


@dataclass(frozen=True)
class AffineAmplitude:
    """Amplitude ``(b . x) unit_phase + c`` with real ``b`` and ``c``."""

    b: np.ndarray
    c: np.ndarray
    unit_phase: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(3))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(3))
        object.__setattr__(self, "unit_phase", _cvec(self.unit_phase))


@dataclass(frozen=True)
class CgoSolution:
    """A solution ``A(x) exp(zeta . x)`` of the background Navier system."""

    phase: np.ndarray
    amplitude: Union[ConstantAmplitude, AffineAmplitude]
    background: IsotropicBackground

    def __post_init__(self):
        object.__setattr__(self, "phase", _cvec(self.phase))

    @property
    def is_affine(self) -> bool:
        return isinstance(self.amplitude, AffineAmplitude)

    # envelopes: exp(zeta . x) removed, x has shape (..., 3)
    def amplitude_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        amp = self.amplitude
        if self.is_affine:
            return (x @ amp.b)[..., None] * amp.unit_phase + amp.c
        return np.broadcast_to(amp.a, x.shape[:-1] + (3,)).astype(complex)

    def gradient_envelope(self, x) -> np.ndarray:
        """``G_ij = d_i u_j`` without the exponential, shape (..., 3, 3)."""
        A = self.amplitude_at(x)
        G = self.phase[:, None] * A[..., None, :]
        if self.is_affine:
            G = G + np.outer(self.amplitude.b, self.amplitude.unit_phase)
        return G

    def divergence_envelope(self, x) -> np.ndarray:
        A = self.amplitude_at(x)
        div = _cdot(self.phase, A)
        if self.is_affine:
            div = div + self.amplitude.b @ self.amplitude.unit_phase
        return div

    def residual_envelope(self, x) -> np.ndarray:
        """Navier residual without the exponential factor, shape (..., 3)."""
        bg = self.background
        z = self.phase
        zz = _cdot(z, z)
        A = self.amplitude_at(x)
        w2r = bg.omega**2 * bg.rho0
        if self.is_affine:
            b, zh = self.amplitude.b, self.amplitude.unit_phase
            bzh = b @ zh
            lap = 2 * bzh * z + zz * A
            graddiv = _cdot(z, zh) * b + (bzh + _cdot(z, A))[..., None] * z
        else:
            lap = zz * A
            graddiv = _cdot(z, A)[..., None] * z
        return bg.mu0 * lap + (bg.lambda0 + bg.mu0) * graddiv + w2r * A

    def exponential(self, x) -> np.ndarray:
        return np.exp(np.asarray(x, dtype=float) @ self.phase)

    def displacement(self, x) -> np.ndarray:
        return self.amplitude_at(x) * self.exponential(x)[..., None]

    def gradient(self, x) -> np.ndarray:
        return self.gradient_envelope(x) * self.exponential(x)[..., None, None]

    def divergence(self, x) -> np.ndarray:
        return self.divergence_envelope(x) * self.exponential(x)

    def navier_residual(self, x) -> np.ndarray:
        """``mu0 Lap u + (lambda0 + mu0) grad div u + omega^2 rho0 u`` at ``x``."""
        return self.residual_envelope(x) * self.exponential(x)[..., None]

    def residual_scale(self, x) -> np.ndarray:
        """Natural magnitude of the residual terms, used for relative checks."""
        bg = self.background
        z2 = np.sum(np.abs(self.phase) ** 2)
        k2 = max(bg.kp2, bg.ks2)
        amp = np.linalg.norm(self.amplitude_at(x), axis=-1)
        if self.is_affine:
            amp = amp + np.linalg.norm(self.amplitude.b) / max(np.sqrt(z2), 1e-300)
        return (bg.lambda0 + 2 * bg.mu0 + bg.omega**2 * bg.rho0) * max(z2, k2, 1.0) * amp


eval_displacement = CgoSolution.displacement
eval_gradient = CgoSolution.gradient
eval_divergence = CgoSolution.divergence
navier_residual = CgoSolution.navier_residual


def relative_residual(sol: CgoSolution, x) -> float:
    """Max over points of ``|residual envelope| / residual_scale``."""
    r = np.linalg.norm(sol.residual_envelope(x), axis=-1)
    return float(np.max(r / sol.residual_scale(x)))


def _check_node(s, t):
    d2 = s * s + t * t
    if not d2 > 0:
        raise CgoError("degenerate frequency node s = t = 0")
    return d2


def _kfrak(s, t, bg: IsotropicBackground):
    d2 = _check_node(s, t)
    if bg.omega > 0 and not d2 > bg.ks2:
        raise EvanescentError(
            f"node s^2+t^2={d2:.6g} lies inside the evanescent disk k_s^2={bg.ks2:.6g}")
    return np.sqrt(1.0 - bg.ks2 / d2)


def phase_pair_A(s: float, t: float, bg: IsotropicBackground):
    """Shear pair phases ``i p +/- K q`` and the amplitude ``a = e2``.

    ``p = (s, 0, t)``, ``q = (-t, 0, s)`` and ``K = sqrt(1 - k_s^2 / d^2)``.
    Both phases satisfy ``zeta . zeta = -k_s^2`` and ``a . zeta = 0``.
    """
    K = _kfrak(s, t, bg)
    p = np.array([s, 0.0, t])
    q = np.array([-t, 0.0, s])
    return 1j * p + K * q, 1j * p - K * q, np.array([0.0, 1.0, 0.0], dtype=complex)


def _beta(s, t, r, k2):
    d2 = _check_node(s, t)
    return np.sqrt(complex(r * r / d2 - 1.0 + k2 / d2))


def phase_pair_B(s: float, t: float, r: float, bg: IsotropicBackground):
    """Compressional pair phases carrying the large parameter ``r``.

    ``zeta1 = (i s - i beta t, r, i t + i beta s)`` and
    ``zeta2 = (i s + i beta t, -r, i t - i beta s)`` with the principal root
    ``beta = sqrt(r^2/d^2 - 1 + k_p^2/d^2)``; ``zeta . zeta = -k_p^2``.
    """
    if r < 0:
        raise CgoError("r must be non-negative")
    b = _beta(s, t, r, bg.kp2)
    z1 = np.array([1j * s - 1j * b * t, r, 1j * t + 1j * b * s])
    z2 = np.array([1j * s + 1j * b * t, -r, 1j * t - 1j * b * s])
    return z1, z2


def amplitude_theta(s: float, t: float, bg: IsotropicBackground):
    """Divergence-free amplitudes ``i p K +/- q`` matching :func:`phase_pair_A`."""
    K = _kfrak(s, t, bg)
    p = np.array([s, 0.0, t])
    q = np.array([-t, 0.0, s])
    return 1j * K * p + q, 1j * K * p - q


def phase_pair_F(s: float, t: float, r: float, bg: IsotropicBackground):
    """Mixed compressional/shear pair for the positive-frequency fourth step.

    Returns ``(zeta1, zeta2, theta)`` with ``zeta1 . zeta1 = -k_p^2``,
    ``zeta2 . zeta2 = -k_s^2``, ``zeta1 + zeta2 = 2 i p`` and
    ``theta . zeta2 = 0``, where ``theta = zeta2 - (k_s^2 / r) e2``.
    """
    if not r > 0:
        raise CgoError("the mixed pair needs r > 0")
    d2 = _check_node(s, t)
    d = np.sqrt(d2)
    ks2, kp2 = bg.ks2, bg.kp2
    gamma = -1j * (ks2 - kp2) / (4 * d)
    beta = np.sqrt(complex((r * r + gamma * gamma + 0.5 * (kp2 + ks2) - d2) / d2))
    p = np.array([s, 0.0, t])
    q = np.array([-t, 0.0, s])
    e2 = np.array([0.0, 1.0, 0.0])
    z1 = 1j * p + gamma * p / d + 1j * beta * q + r * e2
    z2 = 1j * p - gamma * p / d - 1j * beta * q - r * e2
    theta = z2 - (ks2 / r) * e2
    return z1, z2, theta


def _cnorm(z):
    return float(np.sqrt(np.sum(np.abs(z) ** 2)))


def affine_amplitude(zeta, bg: IsotropicBackground, tol: float = 1e-10):
    """``b = (lambda0 + mu0) Re zeta_hat`` and ``c = -(lambda0 + 3 mu0)/|zeta| Re zeta_hat``.

    Only defined at zero frequency for ``zeta . zeta = 0``.
    """
    zeta = _cvec(zeta)
    if bg.omega != 0:
        raise CgoError("affine amplitudes exist only at zero frequency")
    n = _cnorm(zeta)
    if not n > 0:
        raise CgoError("zero phase vector")
    if abs(_cdot(zeta, zeta)) > tol * n * n:
        raise CgoError("affine amplitudes need zeta . zeta = 0")
    zh = zeta / n
    b = (bg.lambda0 + bg.mu0) * zh.real
    c = -(bg.lambda0 + 3 * bg.mu0) / n * zh.real
    return b, c


def _affine_solution(zeta, bg):
    b, c = affine_amplitude(zeta, bg)
    return CgoSolution(zeta, AffineAmplitude(b, c, zeta / _cnorm(zeta)), bg)


def rotate_about_x3(sol: CgoSolution, phi: float) -> CgoSolution:
    """Map every vector of the solution by the rotation ``R_phi`` about x3."""
    R = rotation_x3(phi)
    amp = sol.amplitude
    if isinstance(amp, AffineAmplitude):
        amp = AffineAmplitude(R @ amp.b, R @ amp.c, R @ amp.unit_phase)
    else:
        amp = ConstantAmplitude(R @ amp.a)
    return CgoSolution(R @ sol.phase, amp, sol.background)


@dataclass(frozen=True)
class PairConfig:
    """Selection data of one solution pair.

    The pair's combined phase is ``2 i (s cos phi, s sin phi, t)``, so it
    samples the Fourier transform at ``xi = -2 (s cos phi, s sin phi, t)``.
    """

    s: float
    t: float
    phi: float = 0.0
    r: float = 0.0
    kind: str = "A_shear"
    omega: float = 0.0

    def __post_init__(self):
        for name in ("s", "t", "phi", "r", "omega"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.kind not in PAIR_KINDS:
            raise CgoError(f"unknown pair kind {self.kind!r}")
        if self.s == 0 and self.t == 0:
            raise CgoError("degenerate frequency node s = t = 0")
        if self.r < 0 or self.omega < 0:
            raise CgoError("r and omega must be non-negative")

    @property
    def xi(self) -> np.ndarray:
        return frequency_from_node(self.s, self.t, self.phi)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def key(self, digits: int = 12):
        return (round(self.s, digits), round(self.t, digits), round(self.phi, digits),
                round(self.r, digits), self.kind, round(self.omega, digits))


def frequency_from_node(s, t, phi=0.0) -> np.ndarray:
    return -2.0 * np.array([s * np.cos(phi), s * np.sin(phi), t])


def node_from_frequency(xi) -> Tuple[float, float, float]:
    """Inverse of :func:`frequency_from_node` with ``s >= 0`` (phi = 0 on the axis)."""
    xi = np.asarray(xi, dtype=float)
    s = 0.5 * float(np.hypot(xi[0], xi[1]))
    t = -0.5 * float(xi[2])
    phi = float(np.arctan2(-xi[1], -xi[0])) if s > 0 else 0.0
    return s, t, phi


def make_pair(cfg: PairConfig, bg: IsotropicBackground) -> Tuple[CgoSolution, CgoSolution]:
    """Build the solution pair ``(u, v)`` of a configuration, rotated by ``phi``."""
    bg = bg.with_omega(cfg.omega)
    s, t, r, kind = cfg.s, cfg.t, cfg.r, cfg.kind
    if kind in ("C_affine_right", "D_affine_both") and bg.omega != 0:
        raise CgoError(f"{kind} pairs exist only at zero frequency")
    if kind == "A_shear":
        z1, z2, a = phase_pair_A(s, t, bg)
        u = CgoSolution(z1, ConstantAmplitude(a), bg)
        v = CgoSolution(z2, ConstantAmplitude(a), bg)
    elif kind == "E_theta":
        z1, z2, _ = phase_pair_A(s, t, bg)
        t1, t2 = amplitude_theta(s, t, bg)
        u = CgoSolution(z1, ConstantAmplitude(t1), bg)
        v = CgoSolution(z2, ConstantAmplitude(t2), bg)
    elif kind == "B_gradient":
        z1, z2 = phase_pair_B(s, t, r, bg)
        u = CgoSolution(z1, ConstantAmplitude(z1), bg)
        v = CgoSolution(z2, ConstantAmplitude(z2), bg)
    elif kind == "C_affine_right":
        d = np.hypot(s, t)
        if not r > d:
            raise CgoError("the affine right pair needs r > d so that beta is real")
        z1, z2 = phase_pair_B(s, t, r, bg)
        u = CgoSolution(z1, ConstantAmplitude(z1), bg)
        v = _affine_solution(z2, bg)
    elif kind == "D_affine_both":
        z1, z2, _ = phase_pair_A(s, t, bg)
        u = _affine_solution(z1, bg)
        v = _affine_solution(z2, bg)
    elif kind == "F_grad_theta":
        z1, z2, th = phase_pair_F(s, t, r, bg)
        u = CgoSolution(z1, ConstantAmplitude(z1), bg)
        v = CgoSolution(z2, ConstantAmplitude(th), bg)
    else:  # pragma: no cover - guarded by PairConfig
        raise CgoError(kind)
    if cfg.phi != 0:
        u, v = rotate_about_x3(u, cfg.phi), rotate_about_x3(v, cfg.phi)
    return u, v


def tamper(sol: CgoSolution, c_scale: float = 2.0) -> CgoSolution:
    """Copy of an affine solution with ``c`` scaled; used for fault injection."""
    amp = sol.amplitude
    if isinstance(amp, AffineAmplitude):
        amp = AffineAmplitude(amp.b, c_scale * amp.c, amp.unit_phase)
    else:
        amp = ConstantAmplitude(c_scale * amp.a + np.array([0.1, 0.0, 0.0]))
    return replace(sol, amplitude=amp)
