import itertools

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from ticgo.elastic_tensors import IsotropicBackground
from ticgo.freq_algebra import (
    COMPONENTS,
    TERM_COMPONENT,
    ComboTriple,
    LaurentSeries,
    beta_series,
    combo_forward,
    combo_solve,
    combo_solve_k,
    exact_pair_terms,
    exact_vs_series_check,
    fit_r_expansion,
    linrel_matrix,
    listed_coefficients,
    pair_product_expansion,
    r2_split,
    r4_reduction,
    two_frequency_split,
)

fl = st.floats(-10, 10, allow_nan=False)


# --- series arithmetic

def test_series_arithmetic_and_tails():
    a = LaurentSeries({2: 1.0, 0: 3.0}, tail=-2)
    b = LaurentSeries({1: 2.0})
    p = a * b
    assert p.coefficient(3) == 2.0 and p.coefficient(1) == 6.0
    assert p.tail == -1  # tail of a shifted by the leading power of b
    s = a + b
    assert s.coefficient(1) == 2.0 and s.tail == -2
    assert (a - a).coefficient(2) == 0
    assert (2 - b).coefficient(0) == 2.0
    assert (a ** 2).coefficient(4) == 1.0 and (a ** 2).tail == 0
    assert LaurentSeries({-3: 1.0, 1: 1.0}, tail=-2).min_power == 1  # powers at or below tail dropped
    with pytest.raises(ValueError):
        LaurentSeries({0: np.nan})


def test_truncate_sets_tail_to_highest_dropped_power():
    a = LaurentSeries({2: 1.0, 0: 1.0, -1: 5.0, -3: 1.0})
    t = a.truncate(1)
    assert set(t.coeffs) == {2} and t.tail == 0
    assert LaurentSeries({2: 1.0, 0: 0.0}).truncate(1).tail is None


def test_vector_coefficients_and_evaluate():
    a = LaurentSeries({1: [1.0, 2.0], -1: [0.0, 1.0]})
    np.testing.assert_allclose(a.evaluate(2.0), [2.0, 4.5])
    assert a.evaluate(np.array([1.0, 2.0])).shape == (2, 2)
    assert LaurentSeries().coefficient(3) == 0


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 5), st.floats(-5, 5), st.floats(0, 3), st.floats(5, 50))
def test_beta_series_converges(s, t, k, rmul):
    d = np.hypot(s, t)
    r = rmul * d
    exact = np.sqrt(complex(r * r / d**2 - 1 + k * k / d**2))
    ser = beta_series(s, t, k, order=8)
    err = abs(ser.evaluate(r) - exact)
    # next omitted term is O(r^(1 - 2 order))
    bound = 2 * abs((k * k - d * d)) ** 8 / d * r ** (-15) + 1e-12 * abs(exact)
    assert err <= bound


def test_beta_series_exact_when_k_equals_d():
    ser = beta_series(3.0, 4.0, 5.0)
    assert ser.tail is None and ser.coefficient(1) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        beta_series(1.0, 1.0, 0.0, order=2)


# --- listed coefficients against a symbolic oracle

def _sym_terms(s, t, k):
    """Asymptotic coefficients of every term from an independent sympy build."""
    r, x = sp.symbols("r x", positive=True)
    d2 = s**2 + t**2
    beta = sp.sqrt(r**2 / d2 - 1 + k**2 / d2)
    z1 = [sp.I * s - sp.I * t * beta, r, sp.I * t + sp.I * s * beta]
    z2 = [sp.I * s + sp.I * t * beta, -r, sp.I * t - sp.I * s * beta]
    out = {}
    for name, comp in TERM_COMPONENT.items():
        if name.startswith("I"):
            i, j, kk, l = (int(c) - 1 for c in comp[1:])
            cls = {frozenset([(min(i, j), max(i, j)), (min(kk, l), max(kk, l))])}
            expr = 0
            for a, b, c, e in itertools.product(range(3), repeat=4):
                key = frozenset([(min(a, b), max(a, b)), (min(c, e), max(c, e))])
                if key in cls:
                    expr += z1[a] * z1[b] * z2[c] * z2[e]
        else:
            a = {"J1": 0, "J2": 1, "J3": 2}[name]
            expr = -z1[a] * z2[a]
        ser = sp.series(sp.expand(expr).subs(r, 1 / x), x, 0, 1).removeO()
        # coefficient of r^p is the coefficient of x^(-p)
        shifted = sp.expand(ser * x**4)
        out[name] = {p: complex(sp.N(shifted.coeff(x, 4 - p))) for p in (4, 2, 0)}
    return out


@pytest.mark.parametrize("s,t,k", [(sp.Rational(3, 2), sp.Rational(7, 10), sp.Rational(1, 2)),
                                   (sp.Rational(1, 3), sp.Rational(-2, 1), 0),
                                   (sp.Rational(2, 1), sp.Rational(1, 1), sp.Rational(3, 1))])
def test_listed_coefficients_against_symbolic_oracle(s, t, k):
    ref = _sym_terms(s, t, k)
    got = listed_coefficients(float(s), float(t), float(k))
    for name, table in got.items():
        for p, val in table.items():
            assert val == pytest.approx(ref[name][p].real, abs=1e-12, rel=1e-12), (name, p)
            assert abs(ref[name][p].imag) < 1e-12


def test_i1_constant_term_has_factor_two():
    s, t, k = 1.0, 1.0, 0.0
    e = 1.0
    val = listed_coefficients(s, t, k)["I1"][0]
    assert val == pytest.approx(2 * e * 1 + e * e + 1)  # not 1 * e + ...


def test_expansion_matches_listed_coefficients():
    s, t = 1.4, -0.6
    bg = IsotropicBackground(1.0, 1.0, 1.0)
    for omega in (0.0, 1.0):
        k = np.sqrt(bg.with_omega(omega).kp2)
        listed = listed_coefficients(s, t, k)
        terms = pair_product_expansion("B_gradient", s, t, omega, bg)
        for name, table in listed.items():
            idx = COMPONENTS.index(TERM_COMPONENT[name])
            for p, val in table.items():
                assert terms[name].coefficient(p)[idx] == pytest.approx(val, abs=1e-12)


def test_gradient_pair_expansion_is_polynomial_exact():
    rep = exact_vs_series_check("B_gradient", 1.2, 0.7, r_values=(10, 20, 40))
    assert all(v["polynomial_exact"] for v in rep.values())


def test_affine_profile_tail_order():
    rep = exact_vs_series_check("C_affine_right", 1.2, 0.7, r_values=(40, 80, 160, 320))
    prof = rep["profile"]
    # truncating at r^2 drops the 2 t s r / d cross term first
    assert prof["tail_order"] == 1
    np.testing.assert_allclose(prof["observed_orders"], 1.0, atol=0.05)
    with pytest.raises(ValueError):
        exact_vs_series_check("C_affine_right", 3.0, 4.0, r_values=(4, 10))
    with pytest.raises(ValueError):
        exact_vs_series_check("B_gradient", 1.0, 1.0, r_values=(20, 10))


def test_exact_terms_rejects_unknown_kind():
    with pytest.raises(ValueError):
        exact_pair_terms("A_shear", 1.0, 1.0, 5.0)
    with pytest.raises(ValueError):
        pair_product_expansion("C_affine_right", 1.0, 1.0, omega=1.0)


# --- reductions

@pytest.mark.parametrize("s,t", [(1.0, 0.5), (0.3, -2.0), (2.0, 0.0)])
def test_r4_reduction_closed_form(s, t):
    d4 = (s * s + t * t) ** 2
    got = r4_reduction(s, t)
    # c1111 + c3333 - 2 c1133 - 4 c1313 weighted by s^4 / d^4
    np.testing.assert_allclose(got, s**4 / d4 * np.array([1, 0, -2, -4, 1]), atol=1e-12)


def test_r2_split_static_part():
    s, t = 1.3, 0.4
    _, B = r2_split(s, t)
    ti = linrel_matrix() @ B
    np.testing.assert_allclose(ti.real, 2 * s * s * np.array([1, -2, 2, 0, -1]), atol=1e-12)


def test_linrel_pulls_back_entry_weights():
    # sum_e w_e C_e(p) must equal (L w) . p for every weight vector w
    p = np.array([3.0, 1.0, 0.5, 0.7, 2.0])
    ent = dict(C1111=p[0], C2222=p[0], C3333=p[4], C1122=p[1], C1133=p[2], C2233=p[2],
               C1212=0.5 * (p[0] - p[1]), C1313=p[3], C2323=p[3], rho11=0.0, rho33=0.0)
    v = np.array([ent[c] for c in COMPONENTS])
    w = np.random.default_rng(2).normal(size=len(COMPONENTS))
    assert (linrel_matrix() @ w) @ p == pytest.approx(w @ v, rel=1e-13)


# --- combination algebra

@settings(max_examples=100, deadline=None)
@given(fl, fl, fl)
def test_combo_round_trip(c1313, m1, m2):
    g = combo_forward(c1313, m1, m2)
    np.testing.assert_allclose(combo_solve(g), (c1313, m1, m2), atol=1e-12)
    g4 = 2 * m1 - m2
    np.testing.assert_allclose(combo_solve_k(g.g1, g.g3, g4), (c1313, m1, m2), atol=1e-12)


def test_combo_triple_values():
    assert combo_forward(1.0, 2.0, 3.0) == ComboTriple(2.0, 7.0, -1.0)


@settings(max_examples=100, deadline=None)
@given(fl, fl, st.floats(0.1, 5), st.floats(0.1, 5))
def test_two_frequency_split_residual(A, B, w1, w2):
    if abs(w1 - w2) < 1e-2:
        return
    a, b = two_frequency_split(w1**2 * A + B, w2**2 * A + B, w1, w2)
    assert abs(a - A) <= 1e-9 * (1 + abs(A) + abs(B)) / abs(w1**2 - w2**2)
    assert abs((w1**2 * a + b) - (w1**2 * A + B)) <= 1e-10 * (1 + abs(A) * w1**2 + abs(B))


def test_two_frequency_split_rejects_bad_input():
    with pytest.raises(ValueError):
        two_frequency_split(1, 2, 1.0, 1.0)
    with pytest.raises(ValueError):
        two_frequency_split(1, 2, 0.0, 1.0)
    a, b = two_frequency_split(np.array([5.0, 2.0]), np.array([2.0, 2.0]), 2.0, 1.0)
    np.testing.assert_allclose(a, [1.0, 0.0])
    np.testing.assert_allclose(b, [1.0, 2.0])


def test_fit_r_expansion_recovers_polynomial():
    r = np.array([8, 11, 16, 22, 32, 45, 64, 90], dtype=float)
    c, cond, res = fit_r_expansion(r, 5 * r**4 + 3 * r**2)
    assert c[4] == pytest.approx(5, rel=1e-8) and c[2] == pytest.approx(3, rel=1e-6)
    assert res < 1e-12 and cond < 1e10
    cv, _, _ = fit_r_expansion(r, np.stack([r**4, 2 * r**3], axis=1))
    np.testing.assert_allclose(cv[4], [1, 0], atol=1e-10)
    np.testing.assert_allclose(cv[3], [0, 2], atol=1e-8)
