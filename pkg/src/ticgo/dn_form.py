"""Linearized Dirichlet-to-Neumann bilinear form and its exact oracles.

For a solution pair ``(u, v)`` the data functional is

    int_box dC_ijkl d_i u_j d_k v_l - omega^2 drho_ik u_i v_k dx .

Two routes evaluate it:

* :func:`bilinear_form` contracts the full stiffness tensor with the
  solution gradients at every quadrature node;
* :func:`pair_polynomial` rewrites the integrand as a polynomial of degree at
  most two in ``tau = u_hat . x`` times the combined phase
  ``exp(-i xi . x)``, so that the form is a short sum of Fourier moments
  ``F[x^alpha f](xi)``. :class:`MomentEngine` computes those moments by the
  same quadrature, and :func:`box_moments` gives them in closed form for
  constant fields (the constant oracle).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .cgo import CgoError, CgoSolution, PairConfig, make_pair
from .elastic_tensors import (
    DensityPerturbationField,
    IsotropicBackground,
    SpatialGrid,
    TIComponents,
    TIPerturbationField,
    ti_basis,
)

log = logging.getLogger(__name__)

__all__ = [
    "QuadratureSpec",
    "FormValue",
    "PairPolynomial",
    "MONOMIALS",
    "bilinear_form",
    "pair_polynomial",
    "box_moments",
    "directional_moments",
    "constant_oracle",
    "box_transform",
    "MomentEngine",
    "synthesize_data",
    "quadrature_cap",
]

# monomials x^a y^b z^c of total degree <= 2
MONOMIALS = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0), (1, 1, 0), (1, 0, 1),
             (0, 2, 0), (0, 1, 1), (0, 0, 2))
_MONO_INDEX = {m: i for i, m in enumerate(MONOMIALS)}
# raw basis of the fast path: five TI components then rho11, rho33
N_RAW = 7


@dataclass(frozen=True)
class QuadratureSpec:
    """Tensor-product quadrature on the box.

    Parameters
    ----------
    rule : {'gauss', 'midpoint'}
    points : int
        Points per axis (>= 2 for Gauss-Legendre, >= 8 for midpoint).
    """

    rule: str = "gauss"
    points: int = 16

    def __post_init__(self):
        if self.rule not in ("gauss", "midpoint"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        lo = 2 if self.rule == "gauss" else 8
        if int(self.points) < lo:
            raise ValueError(f"{self.rule} quadrature needs at least {lo} points per axis")
        object.__setattr__(self, "points", int(self.points))

    def nodes_weights(self, center: float, half_width: float):
        n = self.points
        if self.rule == "gauss":
            x, w = np.polynomial.legendre.leggauss(n)
        else:
            x = -1 + (2 * np.arange(n) + 1) / n
            w = np.full(n, 2.0 / n)
        return center + half_width * x, half_width * w

    def to_dict(self):
        return {"rule": self.rule, "points": self.points}


def quadrature_cap(quad: QuadratureSpec, grid: SpatialGrid) -> float:
    """Largest per-axis frequency with at least 4 points per oscillation period."""
    return np.pi * quad.points / (4 * max(grid.half_widths))


@dataclass
class FormValue:
    """One bilinear-form datum; ``ok`` is False when the configuration failed."""

    value: complex
    config: PairConfig
    omega: float
    ok: bool = True
    error: Optional[str] = None

    def to_dict(self):
        return {"config": self.config.to_dict(), "value": [self.value.real, self.value.imag],
                "omega": self.omega, "ok": self.ok, "error": self.error}

    @classmethod
    def from_dict(cls, d):
        return cls(complex(*d["value"]), PairConfig.from_dict(d["config"]), d["omega"],
                   d.get("ok", True), d.get("error"))


def _check_pair(u: CgoSolution, v: CgoSolution):
    if not u.background.same_medium(v.background):
        raise ValueError("solutions of a pair must share background and frequency")


def _combined_frequency(u: CgoSolution, v: CgoSolution, tol=1e-9) -> np.ndarray:
    # exp((zu + zv) . x) = exp(-i xi . x)
    zs = u.phase + v.phase
    if np.abs(zs.real).max() > tol * max(1.0, np.abs(zs).max()):
        raise ValueError("pair phase sum is not purely imaginary")
    return -zs.imag


def _tensor_points(grid: SpatialGrid, quad: QuadratureSpec):
    xs, ws = zip(*(quad.nodes_weights(grid.center[j], grid.half_widths[j]) for j in range(3)))
    return xs, ws


def bilinear_form(dC: Optional[TIPerturbationField], dRho: Optional[DensityPerturbationField],
                  u: CgoSolution, v: CgoSolution, quad: QuadratureSpec = QuadratureSpec(),
                  grid: Optional[SpatialGrid] = None, use_exact: bool = True) -> complex:
    """Quadrature of the full tensor contraction over the box.

    The density term is skipped entirely at zero frequency.
    """
    _check_pair(u, v)
    if grid is None:
        grid = (dC or dRho).grid if (dC or dRho) is not None else SpatialGrid()
    xs, ws = _tensor_points(grid, quad)
    X, Y, Z = np.meshgrid(*xs, indexing="ij")
    W = np.einsum("i,j,k->ijk", *ws).ravel()
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=-1)
    phase = np.exp(pts @ (u.phase + v.phase))
    total = np.zeros(pts.shape[0], dtype=complex)
    if dC is not None:
        p = dC.evaluate(X.ravel(), Y.ravel(), Z.ravel(), use_exact=use_exact)
        # full tensor C_ijkl(x) at each node, then C : G (x) H
        C = np.einsum("qn,qijkl->nijkl", p, ti_basis())
        G = u.gradient_envelope(pts)
        H = v.gradient_envelope(pts)
        total += np.einsum("nijkl,nij,nkl->n", C, G, H, optimize=True)
    omega = u.background.omega
    if dRho is not None and omega != 0:
        r = dRho.evaluate(X.ravel(), Y.ravel(), Z.ravel(), use_exact=use_exact)
        A = u.amplitude_at(pts)
        B = v.amplitude_at(pts)
        rho_uv = r[0] * (A[:, 0] * B[:, 0] + A[:, 1] * B[:, 1]) + r[1] * A[:, 2] * B[:, 2]
        total -= omega**2 * rho_uv
    return complex(np.sum(W * phase * total))


@dataclass(frozen=True)
class PairPolynomial:
    """Integrand of a pair as ``sum_q sum_a coeffs[q, a] f_q(x) tau^a exp(-i xi . x)``.

    ``tau = direction . x``; ``q`` runs over the five TI components and
    ``rho11``, ``rho33``.
    """

    xi: np.ndarray
    direction: np.ndarray
    coeffs: np.ndarray  # (7, 3) complex

    @property
    def degree(self) -> int:
        nz = np.nonzero(np.any(self.coeffs != 0, axis=0))[0]
        return int(nz.max()) if nz.size else 0


def _affine_split(sol: CgoSolution, direction):
    # amplitude = A0 + tau * A1 and gradient = G0 + tau * G1 along a unit direction
    amp = sol.amplitude
    z = sol.phase
    if not sol.is_affine:
        G0 = np.outer(z, amp.a)
        return amp.a, np.zeros(3, complex), G0, np.zeros((3, 3), complex)
    b = amp.b
    nb2 = float(b @ b)
    if nb2 > 0 and nb2 - float(b @ direction) ** 2 > 1e-12 * nb2:
        raise ValueError("affine amplitudes of a pair must have parallel b vectors")
    beta = float(b @ direction)
    A0 = amp.c.astype(complex)
    A1 = beta * amp.unit_phase
    G0 = np.outer(b, amp.unit_phase) + np.outer(z, amp.c)
    G1 = beta * np.outer(z, amp.unit_phase)
    return A0, A1, G0, G1


@lru_cache(maxsize=None)
def _ti_basis_9x9():
    return ti_basis().reshape(5, 9, 9)


def pair_polynomial(u: CgoSolution, v: CgoSolution) -> PairPolynomial:
    """Polynomial form of the pair integrand in the raw 7-field basis."""
    _check_pair(u, v)
    xi = _combined_frequency(u, v)
    bs = [s.amplitude.b for s in (u, v) if s.is_affine and np.linalg.norm(s.amplitude.b) > 0]
    direction = bs[0] / np.linalg.norm(bs[0]) if bs else np.array([0.0, 0.0, 1.0])
    uA0, uA1, uG0, uG1 = _affine_split(u, direction)
    vA0, vA1, vG0, vG1 = _affine_split(v, direction)
    T = _ti_basis_9x9()
    ctr = lambda G, H: (T @ H.ravel()) @ G.ravel()
    coeffs = np.zeros((N_RAW, 3), dtype=complex)
    coeffs[:5, 0] = ctr(uG0, vG0)
    coeffs[:5, 1] = ctr(uG1, vG0) + ctr(uG0, vG1)
    coeffs[:5, 2] = ctr(uG1, vG1)
    w2 = u.background.omega ** 2
    if w2 != 0:
        r11 = lambda a, b: a[0] * b[0] + a[1] * b[1]
        r33 = lambda a, b: a[2] * b[2]
        for q, f in ((5, r11), (6, r33)):
            coeffs[q, 0] = -w2 * f(uA0, vA0)
            coeffs[q, 1] = -w2 * (f(uA1, vA0) + f(uA0, vA1))
            coeffs[q, 2] = -w2 * f(uA1, vA1)
    return PairPolynomial(xi, direction, coeffs)


def _sinc_moments_1d(kappa: float, w: float):
    """``K_a = int_{-w}^{w} y^a exp(-i kappa y) dy`` for a = 0, 1, 2."""
    x = kappa * w
    if abs(x) < 0.1:
        # power series of 2 sin(k w)/k and its derivatives in k
        K0 = K1d = K2d = 0.0
        for n in range(9):
            c = 2 * w * (-1) ** n * w ** (2 * n) / _fact(2 * n + 1)
            K0 += c * kappa ** (2 * n)
            if n >= 1:
                K1d += c * 2 * n * kappa ** (2 * n - 1)
                K2d += c * 2 * n * (2 * n - 1) * kappa ** (2 * n - 2)
        J0, J0p, J0pp = K0, K1d, K2d
    else:
        S, C = np.sin(x), np.cos(x)
        J0 = 2 * S / kappa
        J0p = 2 * w * C / kappa - 2 * S / kappa**2
        J0pp = -2 * w * w * S / kappa - 4 * w * C / kappa**2 + 4 * S / kappa**3
    return np.array([J0, 1j * J0p, -J0pp], dtype=complex)


def _fact(n):
    out = 1
    for k in range(2, n + 1):
        out *= k
    return out


def box_moments(xi, grid: SpatialGrid) -> np.ndarray:
    """Closed-form ``int_box x^alpha exp(-i xi . x) dx`` for the 10 monomials."""
    per_axis = []
    for j in range(3):
        c, w, k = grid.center[j], grid.half_widths[j], float(xi[j])
        K = _sinc_moments_1d(k, w)
        # shift y -> c + y
        ph = np.exp(-1j * k * c)
        per_axis.append(ph * np.array([K[0], c * K[0] + K[1], c * c * K[0] + 2 * c * K[1] + K[2]]))
    return np.array([per_axis[0][a] * per_axis[1][b] * per_axis[2][c] for a, b, c in MONOMIALS])


def box_transform(xi, grid: SpatialGrid = SpatialGrid()) -> complex:
    """Fourier transform of the box indicator at ``xi``."""
    return complex(box_moments(xi, grid)[0])


def directional_moments(mono: np.ndarray, direction) -> np.ndarray:
    """Moments of ``tau^a`` (a = 0, 1, 2) from the 10 monomial moments.

    ``mono`` has the monomial axis last; the result replaces it by 3 entries.
    """
    u = np.asarray(direction, dtype=float)
    m = np.asarray(mono)
    out = np.empty(m.shape[:-1] + (3,), dtype=complex)
    out[..., 0] = m[..., 0]
    out[..., 1] = u[0] * m[..., 1] + u[1] * m[..., 2] + u[2] * m[..., 3]
    out[..., 2] = (u[0] ** 2 * m[..., 4] + 2 * u[0] * u[1] * m[..., 5] + 2 * u[0] * u[2] * m[..., 6]
                   + u[1] ** 2 * m[..., 7] + 2 * u[1] * u[2] * m[..., 8] + u[2] ** 2 * m[..., 9])
    return out


def evaluate_polynomial(poly: PairPolynomial, moments: np.ndarray) -> complex:
    """Form value from per-field monomial moments ``moments[q, monomial]``."""
    dm = directional_moments(moments, poly.direction)
    return complex(np.sum(poly.coeffs * dm))


def constant_oracle(p, rho, u: CgoSolution, v: CgoSolution,
                    box: SpatialGrid = SpatialGrid()) -> complex:
    """Exact form value for constant fields on the box.

    Parameters
    ----------
    p : TIComponents or sequence of 5 floats
    rho : (rho11, rho33) or None
    """
    p = p.as_array() if isinstance(p, TIComponents) else np.asarray(p, dtype=float)
    vals = np.zeros(N_RAW)
    vals[:5] = p
    if rho is not None:
        vals[5:] = rho
    poly = pair_polynomial(u, v)
    mono = box_moments(poly.xi, box)
    return evaluate_polynomial(poly, vals[:, None] * mono[None, :])


class MomentEngine:
    """Quadrature moments ``F[x^alpha f_q](xi)`` of the 7 perturbation fields.

    Field values are sampled once on the tensor quadrature nodes; each batch
    of frequencies then costs a few separable matrix products.
    """

    def __init__(self, dC: Optional[TIPerturbationField],
                 dRho: Optional[DensityPerturbationField], quad: QuadratureSpec,
                 grid: Optional[SpatialGrid] = None, use_exact: bool = True, batch: int = 64):
        if grid is None:
            src = dC if dC is not None else dRho
            grid = src.grid if src is not None else SpatialGrid()
        self.grid, self.quad, self.batch = grid, quad, batch
        xs, ws = _tensor_points(grid, quad)
        self.xs, self.ws = xs, ws
        n = [len(x) for x in xs]
        X, Y, Z = np.meshgrid(*xs, indexing="ij")
        f = np.zeros((N_RAW,) + tuple(n))
        if dC is not None:
            f[:5] = dC.evaluate(X, Y, Z, use_exact=use_exact)
        if dRho is not None:
            f[5:] = dRho.evaluate(X, Y, Z, use_exact=use_exact)
        self.active = np.nonzero(np.any(f.reshape(N_RAW, -1) != 0, axis=1))[0]
        self.f = f[self.active]

    def _axis_factors(self, xis, j):
        x, w = self.xs[j], self.ws[j]
        ph = np.exp(-1j * np.outer(xis[:, j], x))  # (B, n)
        return np.stack([w * ph, w * x * ph, w * x * x * ph], axis=1)  # (B, 3, n)

    def moments(self, xis) -> np.ndarray:
        """Array of shape (len(xis), 7, 10)."""
        xis = np.atleast_2d(np.asarray(xis, dtype=float))
        out = np.zeros((len(xis), N_RAW, len(MONOMIALS)), dtype=complex)
        if self.active.size == 0:
            return out
        for lo in range(0, len(xis), self.batch):
            out[lo:lo + self.batch] = self._moments_batch(xis[lo:lo + self.batch])
        return out

    def _moments_batch(self, xis):
        B = len(xis)
        Q, n1, n2, n3 = self.f.shape
        E1, E2, E3 = (self._axis_factors(xis, j) for j in range(3))
        # contract x3 with a real-by-complex product split into two real GEMMs
        E3m = E3.transpose(2, 0, 1).reshape(n3, B * 3)
        fl = self.f.reshape(Q * n1 * n2, n3)
        T3 = (fl @ E3m.real) + 1j * (fl @ E3m.imag)
        T3 = T3.reshape(Q, n1, n2, B, 3).transpose(3, 0, 1, 4, 2)  # (B, Q, n1, c, n2)
        T2 = np.matmul(T3.reshape(B, Q * n1 * 3, n2), E2.transpose(0, 2, 1))
        T2 = T2.reshape(B, Q, n1, 3, 3).transpose(0, 1, 3, 4, 2)  # (B, Q, c, b, n1)
        T1 = np.matmul(T2.reshape(B, Q * 9, n1), E1.transpose(0, 2, 1))
        T1 = T1.reshape(B, Q, 3, 3, 3)  # (B, Q, c, b, a)
        res = np.zeros((B, N_RAW, len(MONOMIALS)), dtype=complex)
        for m, (a, b, c) in enumerate(MONOMIALS):
            res[:, self.active, m] = T1[:, :, c, b, a]
        return res


def _group_by_frequency(configs: Sequence[PairConfig], digits=12):
    keys, index, groups = [], {}, []
    for i, cfg in enumerate(configs):
        k = tuple(np.round(cfg.xi, digits) + 0.0)
        if k not in index:
            index[k] = len(keys)
            keys.append(np.array(k))
            groups.append([])
        groups[index[k]].append(i)
    return np.array(keys).reshape(-1, 3), groups


def synthesize_data(dC: Optional[TIPerturbationField], dRho: Optional[DensityPerturbationField],
                    plan: Sequence[PairConfig], quad: QuadratureSpec = QuadratureSpec(),
                    bg: IsotropicBackground = IsotropicBackground(),
                    grid: Optional[SpatialGrid] = None, method: str = "moments",
                    workers: Optional[int] = None, use_exact: bool = True) -> List[FormValue]:
    """Evaluate the bilinear form for every configuration of a plan.

    Results follow the plan order. A configuration that cannot be built is
    returned with ``ok=False`` and a NaN value; the batch continues.

    Parameters
    ----------
    method : {'moments', 'direct'}
        ``'moments'`` groups configurations by frequency and uses
        :class:`MomentEngine`; ``'direct'`` calls :func:`bilinear_form`.
    workers : int, optional
        Thread count for the per-frequency work.
    """
    plan = list(plan)
    out: List[Optional[FormValue]] = [None] * len(plan)
    if not plan:
        return []

    def fail(i, exc):
        log.debug("config %d failed: %s", i, exc)
        out[i] = FormValue(complex(np.nan, np.nan), plan[i], plan[i].omega, False, str(exc))

    if method == "direct":
        def one(i):
            try:
                u, v = make_pair(plan[i], bg)
                out[i] = FormValue(bilinear_form(dC, dRho, u, v, quad, grid, use_exact),
                                   plan[i], plan[i].omega)
            except (CgoError, ValueError) as exc:
                fail(i, exc)
        _run(one, range(len(plan)), workers)
        return out
    if method != "moments":
        raise ValueError(f"unknown method {method!r}")

    engine = MomentEngine(dC, dRho, quad, grid, use_exact=use_exact)
    polys: List[Optional[PairPolynomial]] = [None] * len(plan)
    for i, cfg in enumerate(plan):
        try:
            polys[i] = pair_polynomial(*make_pair(cfg, bg))
        except (CgoError, ValueError) as exc:
            fail(i, exc)
    good = [i for i in range(len(plan)) if polys[i] is not None]
    xis, groups = _group_by_frequency([plan[i] for i in good])
    chunks = [list(range(lo, min(lo + engine.batch, len(xis))))
              for lo in range(0, len(xis), engine.batch)]

    def chunk(ids):
        M = engine.moments(xis[ids])
        for row, g in zip(M, (groups[k] for k in ids)):
            for j in g:
                i = good[j]
                out[i] = FormValue(evaluate_polynomial(polys[i], row), plan[i], plan[i].omega)

    _run(chunk, chunks, workers)
    return out


def _run(fn, items, workers):
    items = list(items)
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(fn, items))
    else:
        for it in items:
            fn(it)
