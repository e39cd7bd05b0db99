"""Truncated Laurent series in the large parameter ``r`` and combination algebra.

A :class:`LaurentSeries` stores one coefficient per power of ``r``; each
coefficient may be a vector over stiffness/density component labels, which
keeps every component separate through products. ``tail`` records the order
of the first omitted term (``None`` for an exact finite expansion).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Dict, Iterable, Optional, Sequence

import numpy as np
from scipy.special import binom

from .elastic_tensors import IsotropicBackground

__all__ = [
    "LaurentSeries",
    "COMPONENTS",
    "TERM_COMPONENT",
    "beta_series",
    "pair_product_expansion",
    "exact_pair_terms",
    "exact_vs_series_check",
    "listed_coefficients",
    "linrel_matrix",
    "r4_reduction",
    "r2_split",
    "ComboTriple",
    "combo_forward",
    "combo_solve",
    "combo_solve_k",
    "two_frequency_split",
    "fit_r_expansion",
]


class LaurentSeries:
    """Finite Laurent polynomial in ``r`` with an optional error order.

    Parameters
    ----------
    coeffs : dict
        ``power -> coefficient`` (scalar or array, all of one shape).
    tail : int or None
        The expansion is accurate up to ``O(r**tail)``; ``None`` when exact.
    """

    __slots__ = ("coeffs", "tail")

    def __init__(self, coeffs: Dict[int, object] = None, tail: Optional[int] = None):
        coeffs = {} if coeffs is None else coeffs
        clean = {}
        for p, c in coeffs.items():
            c = np.asarray(c, dtype=complex)
            if not np.all(np.isfinite(c)):
                raise ValueError("series coefficients must be finite")
            if tail is not None and p <= tail:
                continue
            clean[int(p)] = c
        self.coeffs = clean
        self.tail = tail

    @classmethod
    def monomial(cls, power: int, coeff=1.0) -> "LaurentSeries":
        return cls({power: coeff})

    @classmethod
    def constant(cls, c) -> "LaurentSeries":
        return cls({0: c})

    @property
    def max_power(self) -> int:
        return max(self.coeffs) if self.coeffs else -np.inf

    @property
    def min_power(self) -> int:
        return min(self.coeffs) if self.coeffs else np.inf

    def coefficient(self, p: int):
        if p in self.coeffs:
            return self.coeffs[p]
        shapes = [np.shape(c) for c in self.coeffs.values()]
        return np.zeros(shapes[0] if shapes else (), dtype=complex)

    @staticmethod
    def _min_tail(*tails):
        tails = [t for t in tails if t is not None]
        return min(tails) if tails else None

    def __add__(self, other):
        if not isinstance(other, LaurentSeries):
            other = LaurentSeries.constant(other)
        out = dict(self.coeffs)
        for p, c in other.coeffs.items():
            out[p] = out[p] + c if p in out else c
        return LaurentSeries(out, self._min_tail(self.tail, other.tail))

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-other if isinstance(other, LaurentSeries) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, a) -> "LaurentSeries":
        return LaurentSeries({p: a * c for p, c in self.coeffs.items()}, self.tail)

    def __mul__(self, other):
        if not isinstance(other, LaurentSeries):
            return self.scale(other)
        out: Dict[int, object] = {}
        for (p, a), (q, b) in product(self.coeffs.items(), other.coeffs.items()):
            ab = np.multiply(a, b)
            out[p + q] = out[p + q] + ab if p + q in out else ab
        tails = []
        if self.tail is not None and other.coeffs:
            tails.append(self.tail + other.max_power)
        if other.tail is not None and self.coeffs:
            tails.append(other.tail + self.max_power)
        return LaurentSeries(out, min(tails) if tails else None)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = LaurentSeries.constant(1.0)
        for _ in range(int(n)):
            out = out * self
        return out

    def truncate(self, min_power: int) -> "LaurentSeries":
        """Drop powers below ``min_power``; the tail becomes the highest dropped power."""
        dropped = [p for p, c in self.coeffs.items() if p < min_power and np.any(c != 0)]
        tail = self._min_tail(self.tail)
        if dropped:
            tail = max(dropped) if tail is None else max(tail, max(dropped))
        return LaurentSeries({p: c for p, c in self.coeffs.items() if p >= min_power}, tail)

    def evaluate(self, r):
        r = np.asarray(r, dtype=float)
        total = 0
        for p, c in self.coeffs.items():
            total = total + np.multiply.outer(r ** p, c)
        return total

    def __repr__(self):
        terms = " + ".join(f"({np.round(c, 6)}) r^{p}" for p, c in sorted(self.coeffs.items(),
                                                                           reverse=True))
        tail = "" if self.tail is None else f" + O(r^{self.tail})"
        return f"LaurentSeries({terms or '0'}{tail})"


# component labels of the gradient-pair expansion; stiffness classes first
COMPONENTS = ("C1111", "C2222", "C3333", "C1122", "C1133", "C2233", "C1212", "C1313",
              "C2323", "rho11", "rho33")
TERM_COMPONENT = {"I1": "C1111", "I2": "C2222", "I3": "C3333", "I4": "C1122", "I5": "C1133",
                  "I6": "C2233", "I7": "C1212", "I8": "C1313", "I9": "C2323",
                  "J1": "rho11", "J2": "rho11", "J3": "rho33"}


def _unit(label):
    v = np.zeros(len(COMPONENTS), dtype=complex)
    v[COMPONENTS.index(label)] = 1.0
    return v


def _images(label):
    i, j, k, l = (int(ch) - 1 for ch in label[1:])
    out = set()
    for a, b in ((i, j), (j, i)):
        for c, d in ((k, l), (l, k)):
            out.add((a, b, c, d))
            out.add((c, d, a, b))
    return sorted(out)


def _d(s, t):
    d2 = s * s + t * t
    if not d2 > 0:
        raise ValueError("degenerate node s = t = 0")
    return np.sqrt(d2)


def beta_series(s: float, t: float, k: float, order: int = 3) -> LaurentSeries:
    """Binomial expansion of ``sqrt(r^2/d^2 - 1 + k^2/d^2)`` in powers of 1/r.

    ``order`` is the number of retained terms (at least 3). When ``k = d``
    the root is exactly ``r/d`` and the series is exact.
    """
    if order < 3:
        raise ValueError("keep at least three terms")
    d = _d(s, t)
    a = k * k - d * d
    if a == 0:
        return LaurentSeries({1: 1.0 / d})
    coeffs = {1 - 2 * n: binom(0.5, n) * a ** n / d for n in range(order)}
    return LaurentSeries(coeffs, tail=1 - 2 * order)


def beta_squared_series(s: float, t: float, k: float) -> LaurentSeries:
    """``beta^2 = r^2/d^2 + (k^2 - d^2)/d^2``, exact."""
    d = _d(s, t)
    return LaurentSeries({2: 1.0 / d**2, 0: (k * k - d * d) / d**2})


def _phase_components(s, t, beta, r):
    z1 = [1j * s - 1j * t * beta, r, 1j * t + 1j * s * beta]
    z2 = [1j * s + 1j * t * beta, -r, 1j * t - 1j * s * beta]
    return z1, z2


def _terms_from_phases(z1, z2, unit):
    # I_j: sum over symmetry images of zeta1_i zeta1_j zeta2_k zeta2_l
    terms = {}
    for name in ("I1", "I2", "I3", "I4", "I5", "I6", "I7", "I8", "I9"):
        label = TERM_COMPONENT[name]
        acc = None
        for i, j, k, l in _images(label):
            prod_ = z1[i] * z1[j] * z2[k] * z2[l]
            acc = prod_ if acc is None else acc + prod_
        terms[name] = acc * unit(label)
    # density terms of the omega^2 part: -rho_ik u_i v_k
    terms["J1"] = -(z1[0] * z2[0]) * unit("rho11")
    terms["J2"] = -(z1[1] * z2[1]) * unit("rho11")
    terms["J3"] = -(z1[2] * z2[2]) * unit("rho33")
    return terms


def pair_product_expansion(kind: str, s: float, t: float, omega: float = 0.0,
                           bg: IsotropicBackground = IsotropicBackground(),
                           order: int = 6) -> Dict[str, LaurentSeries]:
    """Laurent expansions of the pair-product integrand terms.

    Parameters
    ----------
    kind : {'B_gradient', 'C_affine_right'}
        ``'B_gradient'`` returns the nine stiffness terms ``I1..I9`` and
        three density terms ``J1..J3`` (the density part is multiplied by
        ``omega^2`` in the integrand). Coefficients are vectors over
        :data:`COMPONENTS`. ``'C_affine_right'`` returns the coefficient of
        ``C1133 - C1111`` for the gradient/affine pair under key
        ``'profile'`` (scalar coefficients).
    order : int
        Number of retained terms of the ``beta`` expansion; odd powers of
        ``beta`` are composed from it.
    """
    bg = bg.with_omega(omega)
    k = np.sqrt(bg.kp2)
    beta = beta_series(s, t, k, order)
    r = LaurentSeries.monomial(1)
    z1, z2 = _phase_components(s, t, beta, r)
    if kind == "B_gradient":
        return _terms_from_phases(z1, z2, _unit)
    if kind == "C_affine_right":
        if omega != 0:
            raise ValueError("the affine pair is a zero-frequency family")
        # div u = 0 and div v = -mu0: coefficient -mu0 * zeta1_3^2
        return {"profile": (z1[2] * z1[2]).scale(-bg.mu0)}
    raise ValueError(f"no expansion for pair kind {kind!r}")


def exact_pair_terms(kind: str, s: float, t: float, r: float, omega: float = 0.0,
                     bg: IsotropicBackground = IsotropicBackground()):
    """Exact numeric values of the terms expanded by :func:`pair_product_expansion`."""
    bg = bg.with_omega(omega)
    d = _d(s, t)
    beta = np.sqrt(complex(r * r / d**2 - 1 + bg.kp2 / d**2))
    z1, z2 = _phase_components(s, t, beta, r)
    if kind == "B_gradient":
        return _terms_from_phases(z1, z2, _unit)
    if kind == "C_affine_right":
        return {"profile": -bg.mu0 * z1[2] * z1[2]}
    raise ValueError(f"no expansion for pair kind {kind!r}")


def listed_coefficients(s: float, t: float, k: float) -> Dict[str, Dict[int, complex]]:
    """Closed-form ``r^4``, ``r^2`` (and ``r^0``) coefficients of each term.

    Values are per unit of the term's own component. The ``r^0`` entry of
    ``I1`` carries the factor 2 on ``t^2 s^2 (d^2 - k^2)/d^2`` that the
    expansion of ``(s^2 - beta^2 t^2)^2`` produces.
    """
    d2 = s * s + t * t
    d4 = d2 * d2
    e = (d2 - k * k) / d2  # (d^2 - k^2) / d^2
    s2, t2 = s * s, t * t
    return {
        "I1": {4: t2**2 / d4, 2: -2 * e * t2**2 / d2 - 2 * t2 * s2 / d2,
               0: 2 * e * t2 * s2 + e * e * t2**2 + s2**2},
        "I2": {4: 1.0, 2: 0.0},
        "I3": {4: s2**2 / d4, 2: -2 * e * s2**2 / d2 - 2 * t2 * s2 / d2,
               0: 2 * e * t2 * s2 + e * e * s2**2 + t2**2},
        "I4": {4: -2 * t2 / d2, 2: 2 * (e * t2 - s2)},
        "I5": {4: 2 * t2 * s2 / d4,
               2: 2 / d2 * (s2**2 + t2**2 + 2 * t2 * s2 + 2 * t2 * s2 * k * k / d2),
               0: 2 * (t2 * s2 * e * e - (s2**2 + t2**2 + 4 * t2 * s2) * e + t2 * s2)},
        "I6": {4: -2 * s2 / d2, 2: 2 * (e * s2 - t2)},
        "I7": {4: -4 * t2 / d2, 2: 4 * (e * t2 + s2)},
        "I8": {4: 4 * t2 * s2 / d4, 2: 4 * (-2 * t2 * s2 * e / d2 - (t2**2 + s2**2) / d2),
               0: 4 * (t2 * s2 * e * e + e * (t2**2 + s2**2) + s2 * t2)},
        "I9": {4: -4 * s2 / d2, 2: 4 * (e * s2 + t2)},
        "J1": {2: -t2 / d2, 0: s2 + e * t2},
        "J2": {2: 1.0},
        "J3": {2: -s2 / d2, 0: t2 + e * s2},
    }


def exact_vs_series_check(kind: str, s: float, t: float, omega: float = 0.0,
                          bg: IsotropicBackground = IsotropicBackground(),
                          r_values: Sequence[float] = (40, 80, 160, 320),
                          min_power: Optional[int] = None, order: int = 6) -> dict:
    """Compare truncated expansions with exact term values over an r-sweep.

    The series is truncated at ``min_power`` (default: 0 for the gradient
    pair, 2 for the affine profile). For each term the report holds the
    maximal relative deviation, the predicted tail order and the observed
    orders ``log2(dev(2r)/dev(r))`` between consecutive sweep values.
    """
    r_values = np.asarray(r_values, dtype=float)
    d = _d(s, t)
    if np.any(np.diff(r_values) <= 0):
        raise ValueError("r_values must be increasing")
    if np.any(r_values <= d):
        raise ValueError("all r values must exceed d")
    if min_power is None:
        min_power = 0 if kind == "B_gradient" else 2
    series = {name: ser.truncate(min_power)
              for name, ser in pair_product_expansion(kind, s, t, omega, bg, order).items()}
    exact = [exact_pair_terms(kind, s, t, r, omega, bg) for r in r_values]
    report = {}
    for name, ser in series.items():
        dev, scale = [], []
        for r, ex in zip(r_values, exact):
            approx = ser.evaluate(r)
            dev.append(float(np.max(np.abs(np.asarray(ex[name]) - approx))))
            scale.append(float(np.max(np.abs(ex[name]))) or 1.0)
        dev, scale = np.array(dev), np.array(scale)
        rel = dev / scale
        polynomial_exact = bool(np.all(rel <= 1e-12))
        ratios = np.log2(dev[1:] / dev[:-1]) / np.log2(r_values[1:] / r_values[:-1]) \
            if not polynomial_exact else np.array([])
        report[name] = {
            "max_rel_dev": float(rel.max()),
            "tail_order": ser.tail,
            "observed_orders": ratios.tolist(),
            "polynomial_exact": polynomial_exact,
        }
    return report


def linrel_matrix() -> np.ndarray:
    """Map from :data:`COMPONENTS` stiffness entries to the five TI parameters.

    Rows: c1111, c1122, c1133, c1313, c3333. Density columns are zero.
    """
    L = np.zeros((5, len(COMPONENTS)))
    col = {c: i for i, c in enumerate(COMPONENTS)}
    L[0, col["C1111"]] = L[0, col["C2222"]] = 1
    L[4, col["C3333"]] = 1
    L[1, col["C1122"]] = 1
    L[2, col["C1133"]] = L[2, col["C2233"]] = 1
    L[0, col["C1212"]] = 0.5
    L[1, col["C1212"]] = -0.5
    L[3, col["C1313"]] = L[3, col["C2323"]] = 1
    return L


def _total(terms, names):
    acc = None
    for n in names:
        acc = terms[n] if acc is None else acc + terms[n]
    return acc


def r4_reduction(s: float, t: float, omega: float = 0.0,
                 bg: IsotropicBackground = IsotropicBackground()) -> np.ndarray:
    """``r^4`` coefficient of the stiffness integrand in the five TI parameters."""
    terms = pair_product_expansion("B_gradient", s, t, omega, bg)
    tot = _total(terms, [f"I{j}" for j in range(1, 10)])
    return (linrel_matrix() @ tot.coefficient(4)).real


def r2_split(s: float, t: float, bg: IsotropicBackground = IsotropicBackground(),
             omega: float = 1.0):
    """Split the ``r^2`` coefficient as ``omega^2 A + B``.

    Returns ``(A, B)`` as vectors over :data:`COMPONENTS` (stiffness entries
    before the linear relations, density entries included in ``A``).
    """
    I = [f"I{j}" for j in range(1, 10)]
    J = ["J1", "J2", "J3"]
    t0 = pair_product_expansion("B_gradient", s, t, 0.0, bg)
    tw = pair_product_expansion("B_gradient", s, t, omega, bg)
    B = _total(t0, I).coefficient(2)
    A = (_total(tw, I).coefficient(2) - B) / omega**2 + _total(tw, J).coefficient(2)
    return A, B


@dataclass(frozen=True)
class ComboTriple:
    """Transforms of C1212+C1313, C1111-2C1133+4C1313+C3333 and C1111-2C1133-4C1313+C3333."""

    g1: complex
    g2: complex
    g3: complex


def combo_forward(c1313, m1, m2) -> ComboTriple:
    """Forward map from ``(C1313, C1111-C1122, C1111-2C1133+C3333)``."""
    return ComboTriple(0.5 * m1 + c1313, m2 + 4 * c1313, m2 - 4 * c1313)


def combo_solve(g: ComboTriple):
    """Return ``(c1313, m1, m2)``; exact inverse of :func:`combo_forward`."""
    c1313 = (g.g2 - g.g3) / 8
    m2 = (g.g2 + g.g3) / 2
    m1 = 2 * (g.g1 - c1313)
    return c1313, m1, m2


def combo_solve_k(g1, g3, g4):
    """Solve from ``g1``, ``g3`` and ``g4 = F[C1111 - 2C1122 + 2C1133 - C3333] = 2 m1 - m2``."""
    c1313 = (4 * g1 - g4 - g3) / 8
    m1 = 2 * (g1 - c1313)
    m2 = 4 * g1 - 4 * c1313 - g4
    return c1313, m1, m2


def two_frequency_split(gA, gB, w1: float, w2: float):
    """Solve ``[w1^2, 1; w2^2, 1] (A, B) = (gA, gB)``; works elementwise on arrays."""
    w1, w2 = float(w1), float(w2)
    if not (w1 > 0 and w2 > 0):
        raise ValueError("frequencies must be positive")
    det = w1 * w1 - w2 * w2
    if det == 0:
        raise ValueError("equal frequencies give a singular split")
    gA, gB = np.asarray(gA), np.asarray(gB)
    A = (gA - gB) / det
    B = (w1 * w1 * gB - w2 * w2 * gA) / det
    if A.ndim == 0:
        return A[()], B[()]
    return A, B


def fit_r_expansion(r_values, data, powers: Sequence[int] = (4, 3, 2, 1, 0)):
    """Least-squares fit of ``data(r) = sum_p a_p r^p`` in a scaled basis.

    Returns ``(coeffs, cond, rel_residual)`` with ``coeffs`` a dict ``p -> a_p``.
    ``data`` may carry trailing axes, fitted column by column.
    """
    r = np.asarray(r_values, dtype=float)
    y = np.asarray(data)
    rs = r.max()
    V = np.stack([(r / rs) ** p for p in powers], axis=1)
    sol, *_ = np.linalg.lstsq(V, y.reshape(len(r), -1), rcond=None)
    cond = float(np.linalg.cond(V))
    resid = V @ sol - y.reshape(len(r), -1)
    scale = np.linalg.norm(y.reshape(len(r), -1), axis=0)
    rel = float(np.max(np.linalg.norm(resid, axis=0) / np.where(scale > 0, scale, 1.0)))
    coeffs = {p: (sol[i] / rs ** p).reshape(y.shape[1:]) for i, p in enumerate(powers)}
    if y.ndim == 1:
        coeffs = {p: c[()] for p, c in coeffs.items()}
    return coeffs, cond, rel
