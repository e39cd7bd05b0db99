"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records one pass/fail line that the terminal summary prints.
"""

import time

import numpy as np
import pytest

from ticgo.cgo import PAIR_KINDS, PairConfig, make_pair, relative_residual
from ticgo.dn_form import QuadratureSpec, bilinear_form, box_transform, constant_oracle, \
    synthesize_data
from ticgo.elastic_tensors import IsotropicBackground, SpatialGrid
from ticgo.freq_algebra import (
    COMPONENTS,
    TERM_COMPONENT,
    beta_series,
    combo_forward,
    combo_solve,
    exact_vs_series_check,
    linrel_matrix,
    listed_coefficients,
    pair_product_expansion,
    r2_split,
    r4_reduction,
    two_frequency_split,
)
from ticgo.phantoms import Bump, constant_ti_field, default_phantom, isotropic_field
from ticgo.recon import field_errors, forward, reconstruct

BG = IsotropicBackground(1.0, 1.0, 1.0)
UNIT = SpatialGrid()
P = np.array([1.0, 0.6, 0.8, 0.5, 1.2])


def _node(rng, scale=3.0):
    s = rng.uniform(0.2, scale)
    t = rng.uniform(-scale, scale)
    phi = rng.uniform(0, 2 * np.pi)
    d = np.hypot(s, t)
    return s, t, phi, rng.uniform(d + 0.5, 3 * d + 3)


def _families(omega):
    return [k for k in PAIR_KINDS
            if omega == 0 or k not in ("C_affine_right", "D_affine_both")]


def test_criterion_1_cgo_residuals(acceptance):
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.5, 0.5, size=(1000, 3))
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    for omega in (0.0, 1.0, 2.0):
        for kind in _families(omega):
            for _ in range(10):
                s, t, phi, r = _node(rng, 6.0)
                s += 2 * omega  # keep clear of the evanescent disk
                u, v = make_pair(PairConfig(s, t, phi, r, kind, omega), BG)
                worst = max(worst, relative_residual(u, pts), relative_residual(v, pts))
                count += 1
    el = time.perf_counter() - t0
    ok = worst <= 1e-9 and el < 60
    acceptance(1, ok, f"max relative Navier residual {worst:.2e} over {count} pairs x 1000 "
                      f"points (tol 1e-9), {el:.1f} s")
    assert ok


def test_criterion_2_oracle_equivalence(acceptance):
    rng = np.random.default_rng(2)
    quad = QuadratureSpec(points=16)
    dC = constant_ti_field(UNIT, P)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(50):
        omega = (0.0, 1.0, 2.0)[i % 3]
        kinds = _families(omega)
        kind = kinds[rng.integers(len(kinds))]
        s, t, phi, r = _node(rng)
        s += 2 * omega
        u, v = make_pair(PairConfig(s, t, phi, r, kind, omega), BG)
        o = constant_oracle(P, None, u, v, UNIT)
        q = bilinear_form(dC, None, u, v, quad, UNIT)
        worst = max(worst, abs(q - o) / abs(o))
    el = time.perf_counter() - t0
    ok = worst <= 1e-6 and el < 60
    acceptance(2, ok, f"|quadrature - oracle| / |oracle| max {worst:.2e} over 50 configs "
                      f"(tol 1e-6), {el:.1f} s")
    assert ok


def test_criterion_3_shear_pair_identity(acceptance):
    rng = np.random.default_rng(3)
    quad = QuadratureSpec(points=24)
    dC = constant_ti_field(UNIT, P)
    c1212 = 0.5 * (P[0] - P[1])
    worst = 0.0
    for _ in range(20):
        s, t, phi, _ = _node(rng)
        cfg = PairConfig(s, t, phi, kind="A_shear")
        ref = -(s * s + t * t) * (c1212 + P[3]) * box_transform(cfg.xi, UNIT)
        u, v = make_pair(cfg, BG)
        for val in (bilinear_form(dC, None, u, v, quad, UNIT), constant_oracle(P, None, u, v)):
            worst = max(worst, abs(val - ref) / abs(ref))
    ok = worst <= 1e-8
    acceptance(3, ok, f"shear pair vs -(s^2+t^2)(C1212+C1313) F_box: {worst:.2e} (tol 1e-8)")
    assert ok


def test_criterion_4_asymptotics(acceptance):
    rng = np.random.default_rng(4)
    worst = 0.0
    for i in range(50):
        s, t, _, _ = _node(rng)
        omega = (0.0, 1.0)[i % 2]
        k = np.sqrt(BG.with_omega(omega).kp2)
        terms = pair_product_expansion("B_gradient", s, t, omega, BG)
        ref = listed_coefficients(s, t, k)
        for name, table in ref.items():
            j = COMPONENTS.index(TERM_COMPONENT[name])
            scale = max(abs(v) for v in table.values())
            for p in (4, 2):
                if p in table:
                    got = terms[name].coefficient(p)[j]
                    worst = max(worst, abs(got - table[p]) / scale)
    # tail order: truncated affine profile and truncated beta expansion
    orders = []
    for i in range(10):
        s, t, _, _ = _node(rng)
        # the dropped r^1 term has weight 2 t s / d; keep it away from zero so the
        # sweep is in the asymptotic range
        t = np.copysign(max(abs(t), 0.5), t)
        prof = exact_vs_series_check("C_affine_right", s, t, r_values=(2e3, 4e3, 8e3, 1.6e4))
        pred = prof["profile"]["tail_order"]
        orders += [o / pred for o in prof["profile"]["observed_orders"]]
        d = np.hypot(s, t)
        ser = beta_series(s, t, 0.0, order=3)
        r = np.array([20, 40, 80]) * d
        exact = np.sqrt(r * r / d**2 - 1)
        dev = np.abs(ser.evaluate(r).real - exact)
        obs = np.log2(dev[1:] / dev[:-1])
        orders += list(obs / ser.tail)
    spread = float(np.max(np.abs(np.array(orders) - 1)))
    ok = worst <= 1e-12 and spread <= 0.2
    acceptance(4, ok, f"listed coefficients max rel dev {worst:.2e} at 50 nodes (tol 1e-12); "
                      f"tail order ratio within {100 * spread:.1f}% (tol 20%)")
    assert ok


def test_criterion_5_combo_algebra(acceptance):
    rng = np.random.default_rng(5)
    rt = 0.0
    for _ in range(200):
        x = rng.normal(size=3) + 1j * rng.normal(size=3)
        back = np.array(combo_solve(combo_forward(*x)))
        rt = max(rt, np.max(np.abs(back - x)) / np.max(np.abs(x)))
    d4 = d2 = 0.0
    for _ in range(50):
        s, t, _, _ = _node(rng)
        dd = s * s + t * t
        ref4 = s**4 / dd**2 * np.array([1, 0, -2, -4, 1])
        d4 = max(d4, np.max(np.abs(r4_reduction(s, t) - ref4)))
        _, B = r2_split(s, t, BG)
        ti = (linrel_matrix() @ B).real
        d2 = max(d2, np.max(np.abs(ti - 2 * s * s * np.array([1, -2, 2, 0, -1]))) / (s * s))
    ok = rt <= 1e-14 and d4 <= 1e-12 and d2 <= 1e-12
    acceptance(5, ok, f"combo round trip {rt:.1e}; r^4 reduction {d4:.1e}; "
                      f"omega^0 r^2 reduction {d2:.1e} (tol 1e-12)")
    assert ok


@pytest.mark.slow
def test_criterion_6_static_reconstruction(acceptance, roundtrip16_static):
    rt = roundtrip16_static
    err = field_errors(rt.dC, rt.rC)
    worst = max(e["rel_l2"] for e in err.values())
    scale = float(np.abs(rt.dC.values).max())
    table = {c.key(): 0j for c in rt.plan.configs()}
    zC, _, _ = reconstruct(table, rt.plan)
    zero = float(np.abs(zC.values).max())
    runtime = rt.forward_s + rt.reconstruct_s
    ok = worst <= 0.05 and zero <= 1e-6 * scale and runtime <= 1800
    per = ", ".join(f"{k} {v['rel_l2']:.4f}" for k, v in err.items())
    acceptance(6, ok, f"16^3, omega=0: rel L2 {per} (tol 0.05); zero data max {zero:.1e}; "
                      f"masked fraction {rt.plan.masked_fraction:.4f}; "
                      f"runtime {runtime:.0f} s (tol 1800)")
    assert ok


@pytest.mark.slow
def test_criterion_7_linearity(acceptance, roundtrip8_static):
    rt = roundtrip8_static
    doubled = rt.phantom.scaled(2.0)
    dC2 = doubled.stiffness_field(rt.grid)
    rC2, _, _ = reconstruct(forward(dC2, None, rt.plan), rt.plan)
    e1 = rt.rC.values - rt.dC.values
    e2 = rC2.values - dC2.values
    lin = float(np.linalg.norm(e2 - 2 * e1) / np.linalg.norm(2 * e1))
    zero_ph = default_phantom().scaled(0.0).stiffness_field(rt.grid)
    zC, _, _ = reconstruct(forward(zero_ph, None, rt.plan), rt.plan)
    zmax = float(np.abs(zC.values).max())
    ok = lin <= 1e-10 and zmax == 0.0
    acceptance(7, ok, f"doubled phantom error vs twice the error {lin:.1e} (tol 1e-10); "
                      f"zero phantom max {zmax:.1e}")
    assert ok


@pytest.mark.slow
def test_criterion_8_two_frequency(acceptance, roundtrip16_dynamic):
    rt = roundtrip16_dynamic
    errC = field_errors(rt.dC, rt.rC)
    errR = field_errors(rt.dRho, rt.rRho)
    wc = max(e["rel_l2"] for e in errC.values())
    wr = max(e["rel_l2"] for e in errR.values())
    # split residual on exact data: two frequencies predict a third
    rng = np.random.default_rng(8)
    split = 0.0
    for _ in range(20):
        s, t, phi, _ = _node(rng)
        s += 4.0
        vals = []
        for w in (1.0, 2.0, 3.0):
            u, v = make_pair(PairConfig(s, t, phi, 0, "A_shear", w), BG)
            vals.append(constant_oracle(P, [0.7, 0.9], u, v))
        A, B = two_frequency_split(vals[0], vals[1], 1.0, 2.0)
        split = max(split, abs(9 * A + B - vals[2]) / abs(vals[2]))
    ok = wr <= 0.10 and wc <= 0.05 and split <= 1e-10
    per = ", ".join(f"{k} {v['rel_l2']:.4f}" for k, v in {**errC, **errR}.items())
    acceptance(8, ok, f"16^3, omega=(1,2): rel L2 {per} (density tol 0.10, stiffness 0.05); "
                      f"split residual {split:.1e} (tol 1e-10)")
    assert ok


def test_criterion_9_lambda_blindness(acceptance):
    grid = SpatialGrid(shape=(8, 8, 8))
    mu = Bump(0.5, (0.0, 0.03, -0.02), (0.4, 0.38, 0.4))
    f1 = isotropic_field(grid, Bump(0.8, (0.02, -0.03, 0.01), (0.4, 0.4, 0.4)), mu)
    f2 = isotropic_field(grid, Bump(-1.3, (-0.05, 0.04, 0.02), (0.38, 0.4, 0.36)), mu)
    rng = np.random.default_rng(9)
    cfgs = []
    for _ in range(25):
        s, t, phi, _ = _node(rng)
        for w in (0.0, 1.0, 2.0):
            cfgs.append(PairConfig(s + 2.5, t, phi, 0, "A_shear", w))
            cfgs.append(PairConfig(s + 2.5, t, phi, 0, "E_theta", w))
    quad = QuadratureSpec(points=24)
    a = synthesize_data(f1, None, cfgs, quad, BG)
    b = synthesize_data(f2, None, cfgs, quad, BG)
    worst = max(abs(x.value - y.value) / max(abs(x.value), abs(y.value)) for x, y in zip(a, b))
    # the both-affine pair has nonzero divergence and does see lambda: the check is not vacuous
    probe = [PairConfig(1.0, 0.5, 0, 0, "D_affine_both")]
    g = synthesize_data(f1, None, probe, quad, BG)[0].value
    h = synthesize_data(f2, None, probe, quad, BG)[0].value
    sees = abs(g - h) / max(abs(g), abs(h))
    ok = worst <= 1e-10 and sees > 1e-3
    acceptance(9, ok, f"divergence-free pair data differ by {worst:.1e} across lambda "
                      f"(tol 1e-10); both-affine pair differs by {sees:.2f}")
    assert ok
