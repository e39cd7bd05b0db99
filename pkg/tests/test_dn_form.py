import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ticgo.cgo import PAIR_KINDS, PairConfig, make_pair
from ticgo.dn_form import (
    MONOMIALS,
    FormValue,
    MomentEngine,
    QuadratureSpec,
    bilinear_form,
    box_moments,
    box_transform,
    constant_oracle,
    directional_moments,
    pair_polynomial,
    quadrature_cap,
    synthesize_data,
)
from ticgo.elastic_tensors import IsotropicBackground, SpatialGrid
from ticgo.phantoms import constant_density_field, constant_ti_field, default_phantom

BG = IsotropicBackground(lambda0=1.0, mu0=1.0, rho0=1.0)
GRID = SpatialGrid(shape=(8, 8, 8))
P = np.array([1.0, 0.6, 0.8, 0.5, 1.2])
RHO = np.array([0.7, 0.9])


def _gauss_moment(xi, grid, alpha, n=80):
    # brute-force separable Gauss-Legendre integral of x^alpha exp(-i xi . x)
    out = 1.0 + 0j
    for j in range(3):
        x, w = np.polynomial.legendre.leggauss(n)
        c, h = grid.center[j], grid.half_widths[j]
        y = c + h * x
        out *= np.sum(h * w * y ** alpha[j] * np.exp(-1j * xi[j] * y))
    return out


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=3, max_size=3))
def test_box_moments_match_quadrature(xi):
    grid = SpatialGrid((0.1, -0.05, 0.0), (0.5, 0.4, 0.45), (8, 8, 8))
    mom = box_moments(xi, grid)
    ref = np.array([_gauss_moment(xi, grid, a) for a in MONOMIALS])
    np.testing.assert_allclose(mom, ref, atol=1e-12, rtol=1e-11)


def test_box_moments_small_argument_branch_is_continuous():
    # the series branch switches at kappa * w = 0.1
    lo = box_moments([0.2 - 1e-9, 0.0, 0.0], GRID)
    hi = box_moments([0.2 + 1e-9, 0.0, 0.0], GRID)
    np.testing.assert_allclose(lo, hi, atol=1e-9)
    assert box_transform([0.0, 0.0, 0.0]) == pytest.approx(1.0)


def test_directional_moments_linear_direction():
    rng = np.random.default_rng(0)
    mono = rng.normal(size=10) + 1j * rng.normal(size=10)
    d = directional_moments(mono, [0.0, 0.0, 1.0])
    np.testing.assert_allclose(d, [mono[0], mono[3], mono[9]])


def _cfgs(omega):
    out = []
    for kind in PAIR_KINDS:
        if kind in ("C_affine_right", "D_affine_both") and omega > 0:
            continue
        r = 6.0 if kind in ("B_gradient", "C_affine_right", "F_grad_theta") else 0.0
        out.append(PairConfig(1.5, 0.8, 0.4, r, kind, omega))
    return out


@pytest.mark.parametrize("omega", [0.0, 1.3])
def test_constant_oracle_matches_direct_quadrature(omega):
    quad = QuadratureSpec(points=40)
    dC = constant_ti_field(GRID, P)
    dR = constant_density_field(GRID, RHO)
    for cfg in _cfgs(omega):
        u, v = make_pair(cfg, BG)
        exact = constant_oracle(P, RHO, u, v, GRID)
        num = bilinear_form(dC, dR, u, v, quad, GRID)
        assert abs(num - exact) <= 1e-10 * max(1.0, abs(exact)), cfg.kind


def test_density_ignored_at_zero_frequency():
    u, v = make_pair(PairConfig(1.0, 0.5), BG)
    dR = constant_density_field(GRID, RHO)
    assert bilinear_form(None, dR, u, v, QuadratureSpec(points=8), GRID) == 0
    assert constant_oracle(np.zeros(5), RHO, u, v, GRID) == 0


def test_pair_polynomial_degrees():
    deg = {}
    for cfg in _cfgs(0.0):
        deg[cfg.kind] = pair_polynomial(*make_pair(cfg, BG)).degree
    assert deg["A_shear"] == 0 and deg["B_gradient"] == 0
    assert deg["C_affine_right"] == 1 and deg["D_affine_both"] == 2


@pytest.mark.parametrize("omega", [0.0, 1.3])
def test_moment_route_matches_direct_route(omega):
    ph = default_phantom(with_density=True)
    dC, dR = ph.stiffness_field(GRID), ph.density_field(GRID)
    quad = QuadratureSpec(points=24)
    cfgs = _cfgs(omega)
    a = synthesize_data(dC, dR, cfgs, quad, BG, method="moments")
    b = synthesize_data(dC, dR, cfgs, quad, BG, method="direct", workers=2)
    for x, y in zip(a, b):
        assert x.ok and y.ok
        assert abs(x.value - y.value) <= 1e-11 * max(1.0, abs(y.value))


def test_moment_engine_zero_fields():
    eng = MomentEngine(None, None, QuadratureSpec(points=8), GRID)
    assert not eng.moments([[1.0, 2.0, 3.0]]).any()


def test_synthesize_keeps_going_after_a_failure():
    cfgs = [PairConfig(1.0, 0.5, kind="A_shear", omega=3.0),  # evanescent
            PairConfig(4.0, 0.5, kind="A_shear", omega=3.0)]
    dC = constant_ti_field(GRID, P)
    out = synthesize_data(dC, None, cfgs, QuadratureSpec(points=8), BG)
    assert not out[0].ok and np.isnan(out[0].value.real) and "evanescent" in out[0].error
    assert out[1].ok and np.isfinite(out[1].value)
    assert FormValue.from_dict(out[1].to_dict()).value == out[1].value
    with pytest.raises(ValueError):
        synthesize_data(dC, None, cfgs, method="bogus")
    assert synthesize_data(dC, None, []) == []


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec("simpson", 10)
    with pytest.raises(ValueError):
        QuadratureSpec("midpoint", 4)
    x, w = QuadratureSpec("midpoint", 8).nodes_weights(0.0, 0.5)
    assert w.sum() == pytest.approx(1.0) and x.min() > -0.5
    assert quadrature_cap(QuadratureSpec(points=48), SpatialGrid()) == pytest.approx(24 * np.pi)


def test_mismatched_backgrounds_rejected():
    u, _ = make_pair(PairConfig(1.0, 0.5), BG)
    _, v = make_pair(PairConfig(2.0, 0.5, omega=0.5), BG)
    with pytest.raises(ValueError):
        pair_polynomial(u, v)
