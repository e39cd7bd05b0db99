"""Staged reconstruction of the TI stiffness (and density) perturbation.

Every datum is an exact linear functional of the Fourier moments
``F[tau^a f_q](xi)`` of the unknown fields, with coefficients given by
:func:`ticgo.dn_form.pair_polynomial`. The pipeline works per frequency site
and in the reconstruction basis ``(c1313, m1, m2, cdiff, c1111)`` plus the two
densities:

* tier 1 (``c1313, m1, m2``) from the shear pair and the gradient pair
  (value at ``r = 0`` and an r-sweep fit) through the combination algebra;
* ``cdiff = C1133 - C1111`` from the gradient/affine pair (zero frequency) or
  the mixed gradient/shear pair (positive frequency) after subtracting
  tier-1 contributions;
* ``c1111`` from the both-affine pair (zero frequency) or the gradient pair at
  ``r = 0`` (positive frequency);
* densities from the ``omega^2`` part of the shear pair and from the
  divergence-free shear pair.

At zero frequency the affine pairs carry moments ``F[tau f]`` and
``F[tau^2 f]``; they are obtained from a 3x3 stencil of probe frequencies
around each site (``F[tau f] = i d/dtau F``). Grid nodes where a division
degenerates (the DC node, the ``xi_3`` axis, evanescent nodes) are filled by
extrapolation from rings of auxiliary sites around them.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from multiprocessing import get_context
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cgo import PairConfig, make_pair, node_from_frequency
from .dn_form import FormValue, QuadratureSpec, pair_polynomial, quadrature_cap, synthesize_data
from .elastic_tensors import (
    RAW_FROM_RECON,
    DensityPerturbationField,
    IsotropicBackground,
    SpatialGrid,
    TIPerturbationField,
    rotation_x3,
)
from .freq_algebra import ComboTriple, combo_solve, combo_solve_k, fit_r_expansion, \
    two_frequency_split

log = logging.getLogger(__name__)

__all__ = [
    "RECON_FIELDS",
    "FrequencyPlan",
    "plan_frequencies",
    "pair_coefficients",
    "omega_split",
    "stage1_shear_combo",
    "stage2_gradient_combos",
    "stage3_combo_fields",
    "stage4_cdiff",
    "stage5_c1111",
    "stage_density",
    "solve_site",
    "ComboGrid",
    "inverse_dft",
    "forward",
    "reconstruct",
    "field_errors",
    "relative_l2",
]

RECON_FIELDS = ("c1313", "m1", "m2", "cdiff", "c1111", "rho11", "rho33")
R_SWEEP = (8.0, 11.0, 16.0, 22.0, 32.0, 45.0, 64.0, 90.0)
R_NEAR = (1.25, 1.5, 2.0, 3.0)
RING_DIRECTIONS = 8
SWEEP_COND_MAX = 1e10


# ---------------------------------------------------------------- planning

@dataclass
class FrequencyPlan:
    """Frequency sites, masks and pair configurations of a reconstruction.

    Grid nodes are the DFT frequencies ``xi_k = 2 pi k / L`` with
    ``k_j in [-N_j/2, N_j/2 - 1]``; one node per conjugate pair is kept.
    Sites are the unmasked kept nodes followed by auxiliary ring sites.
    """

    grid: SpatialGrid
    omegas: Tuple[float, ...]
    background: IsotropicBackground
    quad: QuadratureSpec
    r_sweep: Tuple[float, ...]
    r_near: Tuple[float, ...]
    eta: float
    s_min: float
    margin: float
    ring_fractions: Tuple[float, ...]
    nodes: np.ndarray = field(repr=False)          # (M, 3) integer indices
    status: List[str] = field(repr=False)          # 'ok' or a mask reason
    sites: np.ndarray = field(repr=False)          # (S, 3) site frequencies
    node_site: Dict[int, int] = field(repr=False)  # kept node -> site
    rings: Dict[int, Tuple[np.ndarray, np.ndarray]] = field(repr=False)

    @property
    def dxi(self) -> np.ndarray:
        return 2 * np.pi / self.grid.lengths

    @property
    def positive_frequency(self) -> bool:
        return self.omegas[0] > 0

    def node_xi(self, i: int) -> np.ndarray:
        return self.nodes[i] * self.dxi

    def masked(self) -> List[Tuple[tuple, str]]:
        return [(tuple(int(v) for v in self.nodes[i]), st)
                for i, st in enumerate(self.status) if st != "ok"]

    @property
    def masked_fraction(self) -> float:
        return sum(st != "ok" for st in self.status) / len(self.status)

    def site_configs(self, j: int) -> List[PairConfig]:
        return site_configs(self.sites[j], self)

    def configs(self) -> List[PairConfig]:
        """All configurations, in site order with duplicates removed."""
        seen, out = set(), []
        for j in range(len(self.sites)):
            for cfg in self.site_configs(j):
                k = cfg.key()
                if k not in seen:
                    seen.add(k)
                    out.append(cfg)
        return out

    def summary(self) -> dict:
        reasons: Dict[str, int] = {}
        for st in self.status:
            if st != "ok":
                reasons[st] = reasons.get(st, 0) + 1
        return {"grid": self.grid.to_dict(), "omegas": list(self.omegas),
                "kept_nodes": len(self.nodes), "sites": len(self.sites),
                "ring_sites": len(self.sites) - len(self.node_site),
                "masked": reasons, "masked_fraction": self.masked_fraction,
                "r_sweep": list(self.r_sweep), "r_near": list(self.r_near), "eta": self.eta,
                "s_min": self.s_min, "quadrature": self.quad.to_dict()}


def _partner(k, shape):
    # index of -k on the periodic lattice, mapped back to [-N/2, N/2 - 1]
    return tuple(((-kj + n // 2) % n) - n // 2 for kj, n in zip(k, shape))


def _representatives(shape):
    axes = [range(-n // 2, n // 2) for n in shape]
    return [k for k in product(*axes) if k <= _partner(k, shape)]


def _ring_points(center, radii):
    ang = 2 * np.pi * (np.arange(RING_DIRECTIONS) + 0.5) / RING_DIRECTIONS
    pts = np.empty((len(radii), RING_DIRECTIONS, 3))
    for a, rho in enumerate(radii):
        pts[a, :, 0] = center[0] + rho * np.cos(ang)
        pts[a, :, 1] = center[1] + rho * np.sin(ang)
        pts[a, :, 2] = center[2]
    return pts


def plan_frequencies(grid: SpatialGrid = SpatialGrid(), omegas: Sequence[float] = (0.0,),
                     bg: IsotropicBackground = IsotropicBackground(),
                     quad: QuadratureSpec = QuadratureSpec(points=48),
                     r_sweep: Sequence[float] = R_SWEEP, r_near: Sequence[float] = R_NEAR,
                     eta: float = 1e-3, s_min: Optional[float] = None, margin: float = 1.05,
                     ring_fractions: Sequence[float] = (0.1, 0.2, 0.3)) -> FrequencyPlan:
    """Build the deterministic frequency plan.

    Parameters
    ----------
    omegas : sequence of float
        ``(0,)`` for the zero-frequency pipeline or at least two distinct
        positive frequencies for the two-frequency pipeline.
    r_sweep, r_near : sequence of float
        Multiples of ``max(1, d)`` for the gradient-pair sweep and for the
        near-field pairs of the fourth step.
    eta : float
        Probe offset of the moment stencil (zero frequency only).
    s_min : float, optional
        Nodes with ``s < s_min`` are masked as ``'step4-singular'``; the
        default, a quarter of the smallest frequency spacing, masks the
        ``xi_3`` axis only.
    margin : float
        Nodes with ``d <= margin * k_s`` at the largest frequency are masked
        as ``'evanescent'``.
    ring_fractions : sequence of float
        Ring radii around masked nodes as fractions of the frequency spacing.
    """
    shape = grid.shape
    if min(shape) < 8 or any(n % 2 for n in shape):
        raise ValueError("grid size must be even and at least 8 per axis")
    omegas = tuple(float(w) for w in omegas)
    if len(set(omegas)) != len(omegas):
        raise ValueError("omegas must be distinct")
    if omegas != (0.0,):
        if len(omegas) < 2 or min(omegas) <= 0:
            raise ValueError("use omegas=(0,) or at least two positive frequencies")
    if len(r_sweep) < 5:
        raise ValueError("the r-sweep needs at least five values")
    if len(ring_fractions) != 3:
        raise ValueError("ring extrapolation uses three radii")
    dxi = 2 * np.pi / grid.lengths
    s_min = float(dxi.min() / 4) if s_min is None else float(s_min)
    ks = max(np.sqrt(bg.with_omega(w).ks2) for w in omegas)

    nodes = _representatives(shape)
    status = []
    for k in nodes:
        xi = np.asarray(k) * dxi
        d = 0.5 * np.linalg.norm(xi)
        s = 0.5 * np.hypot(xi[0], xi[1])
        if not np.any(k):
            status.append("dc")
        elif ks > 0 and d <= margin * ks:
            status.append("evanescent")
        elif s < s_min:
            status.append("step4-singular")
        else:
            status.append("ok")

    sites, node_site = [], {}
    for i, k in enumerate(nodes):
        if status[i] == "ok":
            node_site[i] = len(sites)
            sites.append(np.asarray(k) * dxi)
    rings = {}
    for i, k in enumerate(nodes):
        if status[i] == "ok":
            continue
        c = np.asarray(k) * dxi
        radii = np.asarray(ring_fractions) * dxi.min()
        pts = _ring_points(c, radii)
        if ks > 0 and np.min(np.linalg.norm(pts, axis=-1)) / 2 <= margin * ks:
            base = 2 * margin * ks + np.hypot(c[0], c[1])
            radii = base * np.array([1.0, 1.5, 2.0])
            pts = _ring_points(c, radii)
        ids = np.arange(len(sites), len(sites) + pts[..., 0].size).reshape(pts.shape[:2])
        sites.extend(pts.reshape(-1, 3))
        rings[i] = (radii, ids)
    if not node_site:
        raise ValueError("no usable frequency node")
    sites = np.array(sites)
    plan = FrequencyPlan(grid, omegas, bg, quad, tuple(map(float, r_sweep)),
                         tuple(map(float, r_near)), float(eta), s_min, float(margin),
                         tuple(map(float, ring_fractions)), np.array(nodes), status, sites,
                         node_site, rings)
    kappa = np.abs(sites).max() + (eta if omegas == (0.0,) else 0.0)
    cap = quadrature_cap(quad, grid)
    if kappa > cap:
        raise ValueError(f"largest frequency {kappa:.4g} exceeds the quadrature cap {cap:.4g}; "
                         "raise the quadrature points")
    return plan


# ------------------------------------------------------ site configurations

def _frame(s, t, phi):
    d = np.hypot(s, t)
    R = rotation_x3(phi)
    return R @ np.array([-t, 0.0, s]) / d, R @ np.array([0.0, 1.0, 0.0])


def _probes(xi, eta):
    s, t, phi = node_from_frequency(xi)
    qhat, e2 = _frame(s, t, phi)
    return {(a, b): node_from_frequency(xi + eta * (a * qhat + b * e2))
            for a in (-1, 0, 1) for b in (-1, 0, 1)}


def _tier1_configs(node, plan, omega=0.0):
    s, t, phi = node
    scale = max(1.0, np.hypot(s, t))
    out = [PairConfig(s, t, phi, 0.0, "A_shear", omega),
           PairConfig(s, t, phi, 0.0, "B_gradient", omega)]
    out += [PairConfig(s, t, phi, f * scale, "B_gradient", omega) for f in plan.r_sweep]
    return out


def _near_configs(node, plan, kind, omega=0.0):
    s, t, phi = node
    scale = max(1.0, np.hypot(s, t))
    return [PairConfig(s, t, phi, f * scale, kind, omega) for f in plan.r_near]


def site_configs(xi, plan: FrequencyPlan) -> List[PairConfig]:
    """Configurations needed to solve one site."""
    if not plan.positive_frequency:
        probes = _probes(np.asarray(xi, dtype=float), plan.eta)
        out = []
        for ab in sorted(probes):
            out += _tier1_configs(probes[ab], plan)
        for a in (-1, 0, 1):
            out += _near_configs(probes[(a, 0)], plan, "C_affine_right")
        s, t, phi = probes[(0, 0)]
        out.append(PairConfig(s, t, phi, 0.0, "D_affine_both"))
        return out
    s, t, phi = node_from_frequency(xi)
    out = []
    for w in plan.omegas:
        out += _tier1_configs((s, t, phi), plan, w)
        out.append(PairConfig(s, t, phi, 0.0, "E_theta", w))
        out += _near_configs((s, t, phi), plan, "F_grad_theta", w)
    return out


# ------------------------------------------------------------ coefficients

def pair_coefficients(cfg: PairConfig, bg: IsotropicBackground):
    """Coefficients of a pair in the reconstruction basis.

    Returns ``(c, direction)`` with ``c`` of shape (3, 7): ``c[a, j]`` is the
    weight of ``F[tau^a X_j](xi)`` where ``X = RECON_FIELDS`` and
    ``tau = direction . x``.
    """
    P = pair_polynomial(*make_pair(cfg, bg))
    c = np.empty((3, 7), dtype=complex)
    c[:, :5] = (RAW_FROM_RECON.T @ P.coeffs[:5]).T
    c[:, 5:] = P.coeffs[5:].T
    return c, P.direction


def omega_split(values, omegas: Sequence[float]):
    """Split ``v(omega) = omega^2 A + B`` from values at several frequencies.

    ``values`` has the frequency axis first. Two frequencies use the exact
    two-by-two solve, more use least squares.
    """
    values = np.asarray(values)
    w = np.asarray(omegas, dtype=float)
    if len(w) == 2:
        return two_frequency_split(values[0], values[1], w[0], w[1])
    V = np.stack([w * w, np.ones_like(w)], axis=1)
    sol, *_ = np.linalg.lstsq(V, values.reshape(len(w), -1), rcond=None)
    return sol[0].reshape(values.shape[1:]), sol[1].reshape(values.shape[1:])


def _lsq_scalar(p, rem):
    # least-squares scalar x with p x ~ rem
    p, rem = np.asarray(p), np.asarray(rem)
    den = np.sum(np.abs(p) ** 2)
    if not den > 0:
        raise ZeroDivisionError("zero profile in a scalar fit")
    x = np.sum(np.conj(p) * rem) / den
    scale = np.linalg.norm(rem)
    res = np.linalg.norm(rem - p * x) / scale if scale > 0 else 0.0
    return complex(x), float(res)


Fetch = Callable[[PairConfig], complex]


# ------------------------------------------------------------------ stages

def stage1_shear_combo(fetch: Fetch, node, plan: FrequencyPlan):
    """Transform of ``C1212 + C1313`` at the node.

    Zero frequency: returns ``g1``. Positive frequencies: returns
    ``(g1, gA, cA)`` where ``gA`` is the ``omega^2`` part of the shear-pair
    datum and ``cA`` its coefficient vector, routed to the density stage.
    """
    s, t, phi = node
    bg = plan.background
    if not plan.positive_frequency:
        cfg = PairConfig(s, t, phi, 0.0, "A_shear")
        c, _ = pair_coefficients(cfg, bg)
        return fetch(cfg) / c[0, 0]
    cfgs = [PairConfig(s, t, phi, 0.0, "A_shear", w) for w in plan.omegas]
    vals = [fetch(c) for c in cfgs]
    coefs = [pair_coefficients(c, bg)[0][0] for c in cfgs]
    gA, gB = omega_split(vals, plan.omegas)
    cA, cB = omega_split(coefs, plan.omegas)
    return gB / cB[0], gA, cA


def _sweep_fit(fetch, node, plan, omega=0.0):
    s, t, phi = node
    scale = max(1.0, np.hypot(s, t))
    r = np.asarray(plan.r_sweep) * scale
    vals = [fetch(PairConfig(s, t, phi, ri, "B_gradient", omega)) for ri in r]
    return fit_r_expansion(r, np.asarray(vals))


def stage2_gradient_combos(fetch: Fetch, node, plan: FrequencyPlan):
    """Gradient-pair combinations at the node.

    Zero frequency: ``(g2, g3, info)`` with ``g2`` from the ``r = 0`` pair and
    ``g3`` from the ``r^4`` coefficient ``s^4/d^4 g3`` of the r-sweep.
    Positive frequencies: ``(g3, g4, info)`` with ``g4 = 2 m1 - m2`` from the
    frequency-independent part ``2 s^2 g4`` of the ``r^2`` coefficient.
    """
    s, t, phi = node
    d2 = s * s + t * t
    lead = s**4 / d2**2
    if not lead > 0:
        raise ZeroDivisionError("the r^4 coefficient vanishes on the x3 axis")
    if not plan.positive_frequency:
        cfg = PairConfig(s, t, phi, 0.0, "B_gradient")
        c, _ = pair_coefficients(cfg, plan.background)
        g2 = fetch(cfg) / c[0, 2]
        coeffs, cond, rel = _sweep_fit(fetch, node, plan)
        return g2, coeffs[4] / lead, {"cond": cond, "fit_residual": rel, "a2": coeffs[2]}
    a4, a2, conds, rels = [], [], [], []
    for w in plan.omegas:
        coeffs, cond, rel = _sweep_fit(fetch, node, plan, w)
        a4.append(coeffs[4])
        a2.append(coeffs[2])
        conds.append(cond)
        rels.append(rel)
    _, a2_static = omega_split(a2, plan.omegas)
    g3 = np.mean(a4) / lead
    g4 = a2_static / (2 * s * s)
    return g3, g4, {"cond": max(conds), "fit_residual": max(rels)}


def stage3_combo_fields(combo: "ComboGrid") -> Dict[str, np.ndarray]:
    """Real spatial fields of the tier-1 combinations from their grids."""
    return {name: inverse_dft(combo.values[name], combo.grid)[0]
            for name in ("c1313", "m1", "m2")}


def _tau_moment(direction, qhat, e2, dq=None, de2=None):
    # F[tau f] = i (u . grad_xi) F for the unit direction u
    cq, ce = float(direction @ qhat), float(direction @ e2)
    if abs(cq * cq + ce * ce - 1) > 1e-8:
        raise ValueError("pair direction leaves the probe plane")
    out = 0
    if abs(cq) > 1e-12:
        if dq is None:
            raise ValueError("missing q-derivative")
        out = out + cq * dq
    if abs(ce) > 1e-12:
        if de2 is None:
            raise ValueError("missing e2-derivative")
        out = out + ce * de2
    return 1j * out


def stage4_cdiff(fetch: Fetch, node, plan: FrequencyPlan, tier1, tier1_de2=None, rho=None):
    """Transform of ``C1133 - C1111`` at the node; returns ``(value, fit_residual)``.

    Zero frequency: gradient/affine pairs over ``r_near``; ``tier1_de2`` is
    the derivative of the tier-1 transforms along ``e2`` (for the
    ``tau``-moments of the affine amplitude). Positive frequencies: mixed
    gradient/shear pairs over ``r_near`` and all frequencies; ``rho`` holds
    the solved densities.
    """
    s, t, phi = node
    bg = plan.background
    T = np.asarray(tier1)
    p, rem = [], []
    if not plan.positive_frequency:
        qhat, e2 = _frame(s, t, phi)
        for cfg in _near_configs(node, plan, "C_affine_right"):
            c, u = pair_coefficients(cfg, bg)
            known = c[0, :3] @ T + c[1, :3] @ _tau_moment(u, qhat, e2, None, tier1_de2)
            p.append(c[0, 3])
            rem.append(fetch(cfg) - known)
    else:
        rho = np.asarray(rho)
        for w in plan.omegas:
            for cfg in _near_configs(node, plan, "F_grad_theta", w):
                c, _ = pair_coefficients(cfg, bg)
                p.append(c[0, 3])
                rem.append(fetch(cfg) - c[0, :3] @ T - c[0, 5:] @ rho)
    return _lsq_scalar(p, rem)


def stage5_c1111(fetch: Fetch, node, plan: FrequencyPlan, tier1, cdiff, tier1_dq=None,
                 tier1_dqq=None, cdiff_dq=None, rho=None):
    """Transform of ``C1111`` at the node; returns ``(value, fit_residual)``.

    Zero frequency: both-affine pair, with the ``tau``-moments of tier 1 up
    to second order and of ``cdiff`` to first order along ``q``; the
    remainder is divided by ``mu0^2``. Positive frequencies: the ``r = 0``
    gradient pair at every frequency (coefficient ``k_p^4``), least squares.
    """
    s, t, phi = node
    bg = plan.background
    T = np.asarray(tier1)
    if not plan.positive_frequency:
        qhat, e2 = _frame(s, t, phi)
        cfg = PairConfig(s, t, phi, 0.0, "D_affine_both")
        c, u = pair_coefficients(cfg, bg)
        sig = float(u @ qhat)
        if abs(abs(sig) - 1) > 1e-8:
            raise ValueError("both-affine pair direction is not along q")
        m1T = _tau_moment(u, qhat, e2, np.asarray(tier1_dq))
        m2T = -np.asarray(tier1_dqq)  # F[tau^2 f] = -(u . grad)^2 F
        m1c = _tau_moment(u, qhat, e2, cdiff_dq)
        known = (c[0, :3] @ T + c[1, :3] @ m1T + c[2, :3] @ m2T
                 + c[0, 3] * cdiff + c[1, 3] * m1c)
        return _lsq_scalar([c[0, 4]], [fetch(cfg) - known])
    rho = np.asarray(rho)
    p, rem = [], []
    for w in plan.omegas:
        cfg = PairConfig(s, t, phi, 0.0, "B_gradient", w)
        c, _ = pair_coefficients(cfg, bg)
        p.append(c[0, 4])
        rem.append(fetch(cfg) - c[0, :3] @ T - c[0, 3] * cdiff - c[0, 5:] @ rho)
    return _lsq_scalar(p, rem)


def stage_density(fetch: Fetch, node, plan: FrequencyPlan, tier1, gA, cA):
    """Transforms ``(rho11, rho33)`` at the node from two-frequency data.

    ``rho11`` from the ``omega^2`` part ``gA`` of the shear pair (coefficient
    vector ``cA``) after substituting tier 1; ``rho33`` from the
    divergence-free shear pairs, least squares over frequencies.
    """
    if not plan.positive_frequency:
        raise ValueError("densities need positive-frequency data")
    s, t, phi = node
    T = np.asarray(tier1)
    rho11 = (gA - cA[:3] @ T) / cA[5]
    p, rem = [], []
    for w in plan.omegas:
        cfg = PairConfig(s, t, phi, 0.0, "E_theta", w)
        c, _ = pair_coefficients(cfg, plan.background)
        p.append(c[0, 6])
        rem.append(fetch(cfg) - c[0, :3] @ T - c[0, 5] * rho11)
    rho33, res = _lsq_scalar(p, rem)
    return complex(rho11), rho33, res


# ------------------------------------------------------------- site solve

@dataclass
class SiteResult:
    values: np.ndarray  # (7,) complex over RECON_FIELDS
    ok: bool
    diag: dict


def _tier1(fetch, node, plan):
    g1 = stage1_shear_combo(fetch, node, plan)
    g2, g3, info = stage2_gradient_combos(fetch, node, plan)
    return np.array(combo_solve(ComboTriple(g1, g2, g3))), info


def solve_site(fetch: Fetch, xi, plan: FrequencyPlan) -> SiteResult:
    """Run all stages at one frequency site."""
    xi = np.asarray(xi, dtype=float)
    node = node_from_frequency(xi)
    s, t, _ = node
    out = np.zeros(7, dtype=complex)
    diag: dict = {}
    if not plan.positive_frequency:
        eta = plan.eta
        probes = _probes(xi, eta)
        T, conds = {}, []
        for ab, nd in probes.items():
            T[ab], info = _tier1(fetch, nd, plan)
            conds.append(info["cond"])
            if ab == (0, 0):
                a2 = info["a2"]
        cd, res4 = {}, []
        for a in (-1, 0, 1):
            de2 = (T[(a, 1)] - T[(a, -1)]) / (2 * eta)
            cd[a], r4 = stage4_cdiff(fetch, probes[(a, 0)], plan, T[(a, 0)], de2)
            res4.append(r4)
        T0 = T[(0, 0)]
        dq = (T[(1, 0)] - T[(-1, 0)]) / (2 * eta)
        dqq = (T[(1, 0)] - 2 * T0 + T[(-1, 0)]) / eta**2
        cdq = (cd[1] - cd[-1]) / (2 * eta)
        c1111, _ = stage5_c1111(fetch, probes[(0, 0)], plan, T0, cd[0], dq, dqq, cdq)
        out[:3], out[3], out[4] = T0, cd[0], c1111
        # overdetermination: the sweep r^2 coefficient is 2 s^2 (2 m1 - m2)
        pred = 2 * s * s * (2 * T0[1] - T0[2])
        scale = abs(a2) + abs(pred)
        diag["consistency"] = float(abs(a2 - pred) / scale) if scale > 0 else 0.0
        diag["cond"] = max(conds)
        diag["stage4_residual"] = max(res4)
        ok = diag["cond"] <= SWEEP_COND_MAX
    else:
        g1, gA, cA = stage1_shear_combo(fetch, node, plan)
        g3, g4, info = stage2_gradient_combos(fetch, node, plan)
        T0 = np.array(combo_solve_k(g1, g3, g4))
        rho11, rho33, res_d = stage_density(fetch, node, plan, T0, gA, cA)
        rho = np.array([rho11, rho33])
        cdiff, res4 = stage4_cdiff(fetch, node, plan, T0, rho=rho)
        c1111, res5 = stage5_c1111(fetch, node, plan, T0, cdiff, rho=rho)
        out[:] = [*T0, cdiff, c1111, rho11, rho33]
        # overdetermination: every configuration of the site predicted from the solution
        worst, scale = 0.0, 0.0
        for cfg in site_configs(xi, plan):
            c, _ = pair_coefficients(cfg, plan.background)
            v = fetch(cfg)
            worst = max(worst, abs(v - c[0] @ out))
            scale = max(scale, abs(v))
        diag["consistency"] = worst / scale if scale > 0 else 0.0
        diag["cond"] = info["cond"]
        diag["stage4_residual"] = res4
        diag["density_residual"] = res_d
        ok = info["cond"] <= SWEEP_COND_MAX
    ok = ok and bool(np.all(np.isfinite(out)))
    return SiteResult(out, ok, diag)


# ------------------------------------------------------- grid and inverse

@dataclass
class ComboGrid:
    """Per-frequency transforms on the full centred DFT grid.

    ``values[name]`` has the grid shape; entry ``k + N/2`` holds the value at
    ``xi_k``. Densities are absent for zero-frequency reconstructions.
    """

    grid: SpatialGrid
    values: Dict[str, np.ndarray]

    @classmethod
    def empty(cls, grid: SpatialGrid, names=RECON_FIELDS):
        return cls(grid, {n: np.full(grid.shape, np.nan + 0j) for n in names})

    def _idx(self, k):
        return tuple(kj + n // 2 for kj, n in zip(k, self.grid.shape))

    def set(self, k, vals: Dict[str, complex]):
        """Set a node and its conjugate partner."""
        i, j = self._idx(k), self._idx(_partner(k, self.grid.shape))
        for n, v in vals.items():
            self.values[n][i] = v
            if j != i:
                self.values[n][j] = np.conj(v)
            else:
                self.values[n][i] = v

    def conjugate_defect(self) -> float:
        """Max of ``|F(-k) - conj F(k)|`` relative; self-conjugate bins are made real later."""
        worst = 0.0
        ks = [np.arange(-n // 2, n // 2) for n in self.grid.shape]
        sc = [np.isin(k, (0, -n // 2)) for k, n in zip(ks, self.grid.shape)]
        selfconj = sc[0][:, None, None] & sc[1][None, :, None] & sc[2][None, None, :]
        for n, a in self.values.items():
            b = a
            for ax, N in enumerate(self.grid.shape):
                # partner index of i is (N - i) mod N in centred storage
                b = np.roll(np.flip(b, axis=ax), 1, axis=ax)
            scale = np.max(np.abs(a)) or 1.0
            dev = np.where(selfconj, 0.0, np.abs(b - np.conj(a)))
            worst = max(worst, float(np.max(dev) / scale))
        return worst


def inverse_dft(F: np.ndarray, grid: SpatialGrid):
    """Real field on the grid nodes from centred transform samples.

    Returns ``(field, imag_ratio)`` where ``imag_ratio`` is the discarded
    imaginary part relative to the real part (max norm).
    """
    shape = grid.shape
    L = grid.lengths
    ks = [np.arange(-n // 2, n // 2) for n in shape]
    xis = [2 * np.pi * k / Lj for k, Lj in zip(ks, L)]
    x0 = grid.origin
    ph = np.exp(1j * xis[0] * x0[0])[:, None, None] * np.exp(1j * xis[1] * x0[1])[None, :, None] \
        * np.exp(1j * xis[2] * x0[2])[None, None, :]
    G = np.asarray(F, dtype=complex) * ph
    # self-conjugate bins (every index 0 or -N/2) must be real
    sc = [np.isin(k, (0, -n // 2)) for k, n in zip(ks, shape)]
    m = sc[0][:, None, None] & sc[1][None, :, None] & sc[2][None, None, :]
    G[m] = G[m].real
    f = np.fft.ifftn(np.fft.ifftshift(G)) * (np.prod(shape) / np.prod(L))
    re = np.max(np.abs(f.real))
    ratio = float(np.max(np.abs(f.imag)) / re) if re > 0 else float(np.max(np.abs(f.imag)))
    return f.real, ratio


def _ring_extrapolate(site_vals, radii, ids):
    # directional mean per radius, quadratic in rho^2, value at rho = 0
    A = site_vals[ids].mean(axis=1)  # (3, ncomp)
    V = np.stack([np.ones_like(radii), radii**2, radii**4], axis=1)
    return np.linalg.solve(V, A)[0]


def _idw_fill(values: Dict[str, np.ndarray], bad: np.ndarray, reach: int = 2):
    good = ~bad
    shape = bad.shape
    for idx in zip(*np.nonzero(bad)):
        wsum, acc = 0.0, {n: 0j for n in values}
        for off in product(range(-reach, reach + 1), repeat=3):
            if not any(off):
                continue
            j = tuple(np.clip(np.add(idx, off), 0, np.subtract(shape, 1)))
            if good[j]:
                w = 1.0 / float(np.dot(off, off))
                wsum += w
                for n in values:
                    acc[n] += w * values[n][j]
        for n in values:
            values[n][idx] = acc[n] / wsum if wsum > 0 else 0.0


# ------------------------------------------------------------- driver

_WORKER_STATE: dict = {}


def _init_worker(plan, table):
    _WORKER_STATE["plan"], _WORKER_STATE["table"] = plan, table


def _solve_chunk(ids):
    plan, table = _WORKER_STATE["plan"], _WORKER_STATE["table"]
    return [_safe_solve(table, plan, j) for j in ids]


def _safe_solve(table, plan, j):
    try:
        return solve_site(lambda c: table[c.key()], plan.sites[j], plan)
    except (ZeroDivisionError, ValueError, np.linalg.LinAlgError) as exc:
        log.debug("site %d failed: %s", j, exc)
        return SiteResult(np.full(7, np.nan + 0j), False, {"error": str(exc)})


def _lookup(data, plan) -> dict:
    if isinstance(data, dict):
        table = dict(data)
    else:
        table = {fv.config.key(): (fv.value if fv.ok else complex(np.nan, np.nan))
                 for fv in data}
    missing = [c for c in plan.configs() if c.key() not in table]
    if missing:
        raise ValueError(f"data does not cover the plan: {len(missing)} configurations missing")
    return table


def forward(dC: Optional[TIPerturbationField], dRho: Optional[DensityPerturbationField],
            plan: FrequencyPlan, workers: Optional[int] = None,
            method: str = "moments") -> List[FormValue]:
    """Synthesize the data bundle a plan needs."""
    return synthesize_data(dC, dRho, plan.configs(), plan.quad, plan.background, plan.grid,
                           method=method, workers=workers)


def reconstruct(data, plan: FrequencyPlan, workers: Optional[int] = None):
    """Invert a data bundle on a plan.

    Parameters
    ----------
    data : list of FormValue or dict
        Bundle values, or a mapping ``PairConfig.key() -> value``.
    workers : int, optional
        Process count for the per-site stages.

    Returns
    -------
    (TIPerturbationField, DensityPerturbationField or None, dict)
    """
    t0 = time.perf_counter()
    table = _lookup(data, plan)
    S = len(plan.sites)
    if workers and workers > 1 and S > 1:
        chunks = [list(range(lo, min(lo + 64, S))) for lo in range(0, S, 64)]
        with ProcessPoolExecutor(workers, mp_context=get_context("fork"),
                                 initializer=_init_worker, initargs=(plan, table)) as ex:
            results = [r for part in ex.map(_solve_chunk, chunks) for r in part]
    else:
        results = [_safe_solve(table, plan, j) for j in range(S)]
    site_vals = np.array([r.values for r in results])
    site_ok = np.array([r.ok for r in results])

    names = RECON_FIELDS if plan.positive_frequency else RECON_FIELDS[:5]
    combo = ComboGrid.empty(plan.grid, names)
    bad = np.zeros(plan.grid.shape, dtype=bool)
    flagged = {"site": 0, "ring": 0}
    for i, k in enumerate(plan.nodes):
        k = tuple(int(v) for v in k)
        if i in plan.node_site:
            j = plan.node_site[i]
            ok, vals = site_ok[j], site_vals[j]
            if not ok:
                flagged["site"] += 1
        else:
            radii, ids = plan.rings[i]
            ok = bool(np.all(site_ok[ids]))
            vals = _ring_extrapolate(site_vals, radii, ids) if ok else None
            if not ok:
                flagged["ring"] += 1
        if ok:
            combo.set(k, {n: vals[RECON_FIELDS.index(n)] for n in names})
        else:
            for kk in (k, _partner(k, plan.grid.shape)):
                bad[combo._idx(kk)] = True
    if bad.any():
        _idw_fill(combo.values, bad)

    fields, imag = {}, {}
    for n in names:
        fields[n], imag[n] = inverse_dft(combo.values[n], plan.grid)
    recon = np.stack([fields[n] for n in RECON_FIELDS[:5]])
    raw = np.einsum("rq,q...->r...", RAW_FROM_RECON, recon)
    dC = TIPerturbationField(plan.grid, raw)
    dRho = None
    if plan.positive_frequency:
        dRho = DensityPerturbationField(plan.grid, np.stack([fields["rho11"], fields["rho33"]]))

    n_flag = flagged["site"] + flagged["ring"]
    diag = {
        "plan": plan.summary(),
        "sites_failed": int((~site_ok).sum()),
        "flagged_nodes": flagged,
        "flagged_fraction": n_flag / len(plan.nodes),
        "low_confidence": n_flag / len(plan.nodes) > 0.2,
        "imag_ratio": imag,
        "conjugate_defect": combo.conjugate_defect(),
    }
    log.info("reconstruction of %d sites took %.1f s", S, time.perf_counter() - t0)
    for key in ("cond", "consistency", "stage4_residual", "density_residual"):
        v = [r.diag[key] for r in results if key in r.diag]
        if v:
            diag[key] = {"max": float(np.max(v)), "median": float(np.median(v))}
    diag["combo_grid"] = combo
    return dC, dRho, diag


# ------------------------------------------------------------- errors

def relative_l2(a, b) -> float:
    """``||a - b|| / ||b||`` (absolute norm when ``b`` vanishes)."""
    a, b = np.asarray(a), np.asarray(b)
    nb = np.linalg.norm(b)
    e = np.linalg.norm(a - b)
    return float(e / nb) if nb > 0 else float(e)


def field_errors(truth, rec) -> Dict[str, dict]:
    """Relative L2 and L-infinity errors per component of two nodal fields."""
    if truth.grid != rec.grid:
        raise ValueError("fields live on different grids")
    out = {}
    for n in truth.names:
        a, b = rec.component(n), truth.component(n)
        sc = np.max(np.abs(b))
        out[n] = {"rel_l2": relative_l2(a, b),
                  "rel_linf": float(np.max(np.abs(a - b)) / sc) if sc > 0
                  else float(np.max(np.abs(a - b)))}
    return out
