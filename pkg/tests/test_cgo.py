import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ticgo.cgo import (
    PAIR_KINDS,
    CgoError,
    EvanescentError,
    PairConfig,
    affine_amplitude,
    amplitude_theta,
    frequency_from_node,
    make_pair,
    node_from_frequency,
    phase_pair_A,
    phase_pair_B,
    phase_pair_F,
    relative_residual,
    tamper,
)
from ticgo.elastic_tensors import IsotropicBackground

BG = IsotropicBackground(lambda0=1.3, mu0=0.8, rho0=1.1)
PTS = np.random.default_rng(0).uniform(-0.5, 0.5, size=(50, 3))


def _cdot(a, b):
    return np.sum(a * b)


def fd_navier(sol, x, h=1e-4):
    """Navier operator by central differences of the displacement itself."""
    bg = sol.background
    u = lambda y: sol.displacement(y[None])[0]
    e = np.eye(3) * h
    lap = sum(u(x + e[i]) - 2 * u(x) + u(x - e[i]) for i in range(3)) / h**2
    gd = np.zeros(3, complex)
    for i in range(3):
        for j in range(3):
            # d_i d_j u_j
            d = (u(x + e[i] + e[j])[j] - u(x + e[i] - e[j])[j]
                 - u(x - e[i] + e[j])[j] + u(x - e[i] - e[j])[j]) / (4 * h * h)
            gd[i] += d
    return bg.mu0 * lap + (bg.lambda0 + bg.mu0) * gd + bg.omega**2 * bg.rho0 * u(x)


def _configs():
    out = []
    for w in (0.0, 1.5):
        for kind in PAIR_KINDS:
            if kind in ("C_affine_right", "D_affine_both") and w > 0:
                continue
            r = 7.0 if kind in ("B_gradient", "C_affine_right", "F_grad_theta") else 0.0
            out.append(PairConfig(2.0, 1.3, 0.7, r, kind, w))
    return out


@pytest.mark.parametrize("cfg", _configs(), ids=lambda c: f"{c.kind}-w{c.omega}")
def test_pairs_solve_navier(cfg):
    u, v = make_pair(cfg, BG)
    for sol in (u, v):
        assert relative_residual(sol, PTS) < 1e-12
    # combined phase is 2 i R_phi (s, 0, t), so the pair samples xi = -2 R_phi p
    np.testing.assert_allclose(u.phase + v.phase, -1j * cfg.xi, atol=1e-12)


@pytest.mark.parametrize("kind", ["A_shear", "D_affine_both", "B_gradient"])
def test_closed_form_residual_matches_finite_differences(kind):
    # small r keeps the exponentials tame for differencing
    cfg = PairConfig(1.1, 0.4, 0.3, 2.0 if kind == "B_gradient" else 0.0, kind, 0.0)
    u, _ = make_pair(cfg, BG)
    x = np.array([0.1, -0.2, 0.15])
    fd = fd_navier(u, x)
    scale = np.abs(u.displacement(x[None])[0]).max() * 10
    assert np.abs(fd).max() < 1e-5 * scale
    # tampered solution must show a residual both ways
    if kind == "D_affine_both":
        bad = tamper(u)
        assert relative_residual(bad, PTS) > 1e-3
        assert np.abs(fd_navier(bad, x)).max() > 1e-3 * scale


def test_phase_identities():
    bg = BG.with_omega(1.2)
    s, t = 1.7, -0.9
    z1, z2, a = phase_pair_A(s, t, bg)
    for z in (z1, z2):
        assert _cdot(z, z) == pytest.approx(-bg.ks2, abs=1e-12)
        assert _cdot(z, a) == pytest.approx(0, abs=1e-14)
    t1, t2 = amplitude_theta(s, t, bg)
    assert _cdot(z1, t1) == pytest.approx(0, abs=1e-12)
    assert _cdot(z2, t2) == pytest.approx(0, abs=1e-12)
    b1, b2 = phase_pair_B(s, t, 5.0, bg)
    for z in (b1, b2):
        assert _cdot(z, z) == pytest.approx(-bg.kp2, abs=1e-10)
    f1, f2, th = phase_pair_F(s, t, 5.0, bg)
    assert _cdot(f1, f1) == pytest.approx(-bg.kp2, abs=1e-10)
    assert _cdot(f2, f2) == pytest.approx(-bg.ks2, abs=1e-10)
    assert _cdot(f2, th) == pytest.approx(0, abs=1e-10)
    np.testing.assert_allclose(f1 + f2, 2j * np.array([s, 0, t]), atol=1e-12)


def test_affine_amplitude_values():
    z1, _, _ = phase_pair_A(1.0, 2.0, BG)
    b, c = affine_amplitude(z1, BG)
    n = np.linalg.norm(np.abs(z1))
    np.testing.assert_allclose(b, (BG.lambda0 + BG.mu0) * (z1 / n).real)
    np.testing.assert_allclose(c, -(BG.lambda0 + 3 * BG.mu0) / n * (z1 / n).real)
    with pytest.raises(CgoError):
        affine_amplitude(z1, BG.with_omega(1.0))
    with pytest.raises(CgoError):
        affine_amplitude(np.array([1.0, 0, 0]), BG)


def test_evanescent_nodes_rejected():
    bg = BG.with_omega(3.0)  # ks^2 = 9 * 1.1 / 0.8
    with pytest.raises(EvanescentError):
        make_pair(PairConfig(1.0, 1.0, kind="A_shear", omega=3.0), BG)
    with pytest.raises(EvanescentError):
        phase_pair_A(0.5, 0.5, bg)
    u, v = make_pair(PairConfig(5.0, 1.0, kind="E_theta", omega=3.0), BG)
    assert relative_residual(u, PTS) < 1e-12


def test_config_validation():
    with pytest.raises(CgoError):
        PairConfig(0.0, 0.0)
    with pytest.raises(CgoError):
        PairConfig(1.0, 1.0, kind="nope")
    with pytest.raises(CgoError):
        PairConfig(1.0, 1.0, r=-1.0)
    with pytest.raises(CgoError):
        make_pair(PairConfig(1.0, 1.0, r=1.0, kind="C_affine_right"), BG)  # r <= d
    with pytest.raises(CgoError):
        make_pair(PairConfig(3.0, 1.0, r=9.0, kind="C_affine_right", omega=1.0), BG)
    with pytest.raises(CgoError):
        make_pair(PairConfig(1.0, 1.0, kind="F_grad_theta", omega=0.5), BG)  # r = 0
    cfg = PairConfig(1, 2, 0.3, 4, "B_gradient", 0.5)
    assert PairConfig.from_dict(cfg.to_dict()) == cfg
    assert isinstance(cfg.s, float)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 10), st.floats(-10, 10), st.floats(-np.pi + 1e-9, np.pi))
def test_node_frequency_round_trip(s, t, phi):
    s2, t2, phi2 = node_from_frequency(frequency_from_node(s, t, phi))
    assert s2 == pytest.approx(s, rel=1e-12)
    assert t2 == pytest.approx(t, rel=1e-12, abs=1e-12)
    assert np.cos(phi2 - phi) == pytest.approx(1.0, abs=1e-10)


def test_axis_node_has_zero_angle():
    assert node_from_frequency([0.0, 0.0, -4.0]) == (0.0, 2.0, 0.0)
