"""Least-squares polynomial activations in the Legendre basis.

Coefficients are orthogonal projections onto Legendre polynomials after an
affine map of ``[lo, hi]`` onto ``[-1, 1]``; the resulting polynomial is
the L2-optimal approximation of its degree on that interval.  The power
basis form is what ciphertext evaluation consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Callable, Sequence

import numpy as np

from .engine import CtVec, HeContext, PtVec
from .errors import DepthExhausted, PlanningError

MAX_CT_DEGREE = 5
_DEPTH_BY_DEGREE = {0: 0, 1: 1, 2: 2, 3: 3, 4: 3, 5: 3}


def legendre_eval(n: int, x):
    """P_n(x) by the three-term recurrence (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}."""
    if n < 0:
        raise ValueError("degree must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    p_prev, p = np.ones_like(x), x.copy()
    if n == 0:
        return p_prev if p_prev.ndim else float(p_prev)
    for k in range(1, n):
        p_prev, p = p, ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
    return p if p.ndim else float(p)


def legendre_table(nmax: int, x) -> np.ndarray:
    """Rows ``P_0(x) .. P_nmax(x)``."""
    x = np.asarray(x, dtype=np.float64)
    rows = [np.ones_like(x)]
    if nmax >= 1:
        rows.append(x.copy())
    for k in range(1, nmax):
        rows.append(((2 * k + 1) * x * rows[k] - k * rows[k - 1]) / (k + 1))
    return np.array(rows[: nmax + 1])


def silu(x):
    x = np.asarray(x, dtype=np.float64)
    return x / (1.0 + np.exp(-x))


ACTIVATIONS: dict[str, Callable] = {"silu": silu}


@dataclass(frozen=True)
class Quadrature:
    """Gauss-Legendre rule on [-1, 1]."""

    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss_legendre(cls, order: int) -> "Quadrature":
        nodes, weights = np.polynomial.legendre.leggauss(order)
        return cls(nodes, weights)

    @property
    def order(self) -> int:
        return len(self.nodes)

    def integrate(self, f: Callable, lo: float = -1.0, hi: float = 1.0) -> float:
        half, mid = (hi - lo) / 2.0, (hi + lo) / 2.0
        return float(half * np.dot(self.weights, f(mid + half * self.nodes)))


def _check_interval(interval) -> tuple[float, float]:
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    return lo, hi


def legendre_coeffs(f: Callable, degree: int, interval=(-1.0, 1.0), quad_order: int = 64) -> np.ndarray:
    """Projection coefficients ``a_n = (2n+1)/2 * int_{-1}^{1} f(x(t)) P_n(t) dt``."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if quad_order < degree + 8:
        raise ValueError(f"quad_order {quad_order} too small for degree {degree}")
    lo, hi = _check_interval(interval)
    q = Quadrature.gauss_legendre(quad_order)
    half, mid = (hi - lo) / 2.0, (hi + lo) / 2.0
    fv = np.asarray(f(mid + half * q.nodes), dtype=np.float64)
    table = legendre_table(degree, q.nodes)
    n = np.arange(degree + 1)
    return (2 * n + 1) / 2.0 * (table @ (q.weights * fv))


def legendre_to_power(a: Sequence[float]) -> np.ndarray:
    """Power-basis coefficients (ascending) of ``sum a_n P_n(t)``."""
    a = np.asarray(a, dtype=np.float64)
    d = len(a) - 1
    basis = [np.array([1.0]), np.array([0.0, 1.0])]
    for k in range(1, d):
        nxt = np.zeros(k + 2)
        nxt[1:] += (2 * k + 1) * basis[k]
        nxt[: k] -= k * basis[k - 1]
        basis.append(nxt / (k + 1))
    out = np.zeros(d + 1)
    for n, an in enumerate(a):
        out[: n + 1] += an * basis[n]
    return out


def to_monomial(a: Sequence[float], interval=(-1.0, 1.0)) -> np.ndarray:
    """Power-basis coefficients in ``x`` of the Legendre series in ``t = (x - mid) / half``."""
    lo, hi = _check_interval(interval)
    half, mid = (hi - lo) / 2.0, (hi + lo) / 2.0
    c = legendre_to_power(a)
    out = np.zeros(len(c))
    # t^k = half^-k * sum_j C(k, j) x^j (-mid)^(k-j)
    for k, ck in enumerate(c):
        for j in range(k + 1):
            out[j] += ck * comb(k, j) * (-mid) ** (k - j) / half ** k
    return out


def eval_monomial(coeffs: Sequence[float], x):
    x = np.asarray(x, dtype=np.float64)
    acc = np.zeros_like(x)
    for c in np.asarray(coeffs, dtype=np.float64)[::-1]:
        acc = acc * x + c
    return acc


def eval_legendre_series(a: Sequence[float], x, interval=(-1.0, 1.0)):
    lo, hi = _check_interval(interval)
    t = (np.asarray(x, dtype=np.float64) - (hi + lo) / 2.0) / ((hi - lo) / 2.0)
    return np.asarray(a) @ legendre_table(len(a) - 1, t)


def approx_error(f: Callable, poly: Callable, interval=(-1.0, 1.0), grid: int = 2001,
                 quad_order: int = 64) -> tuple[float, float]:
    """``(l2, linf)``: root of the integrated squared error, and the dense-grid max error."""
    if grid < 1000:
        raise ValueError("grid must have at least 1000 points")
    lo, hi = _check_interval(interval)
    q = Quadrature.gauss_legendre(quad_order)
    sq = q.integrate(lambda x: (np.asarray(f(x)) - poly(x)) ** 2, lo, hi)
    xs = np.linspace(lo, hi, grid)
    return float(np.sqrt(max(sq, 0.0))), float(np.max(np.abs(f(xs) - poly(xs))))


@dataclass
class PolyApprox:
    degree: int
    legendre_coeffs: np.ndarray
    monomial_coeffs: np.ndarray
    interval: tuple[float, float]
    l2_error: float = float("nan")
    linf_error: float = float("nan")
    function: str = field(default="silu")

    def __call__(self, x):
        return eval_monomial(self.monomial_coeffs, x)

    def legendre_form(self, x):
        return eval_legendre_series(self.legendre_coeffs, x, self.interval)

    def to_dict(self) -> dict:
        return {
            "function": self.function,
            "degree": self.degree,
            "interval": list(self.interval),
            "legendre_coeffs": [float(v) for v in self.legendre_coeffs],
            "monomial_coeffs": [float(v) for v in self.monomial_coeffs],
            "l2_error": self.l2_error,
            "linf_error": self.linf_error,
        }


def approximate(f: Callable | str = "silu", degree: int = 5, interval=(-8.0, 8.0),
                quad_order: int = 64, grid: int = 2001) -> PolyApprox:
    name = f if isinstance(f, str) else getattr(f, "__name__", "custom")
    fn = ACTIVATIONS[f] if isinstance(f, str) else f
    interval = _check_interval(interval)
    a = legendre_coeffs(fn, degree, interval, quad_order)
    m = to_monomial(a, interval)
    l2, linf = approx_error(fn, lambda x: eval_monomial(m, x), interval, grid, quad_order)
    return PolyApprox(degree, a, m, interval, l2, linf, name)


# -- ciphertext evaluation ------------------------------------------------------

def poly_depth(degree: int) -> int:
    if degree not in _DEPTH_BY_DEGREE:
        raise PlanningError(f"no ciphertext evaluation plan for degree {degree}")
    return _DEPTH_BY_DEGREE[degree]


def predict_poly_counts(degree: int) -> dict[str, int]:
    poly_depth(degree)
    mul_ct = {0: 0, 1: 0, 2: 1, 3: 2, 4: 3, 5: 4}[degree]
    return {"mul_pt": degree, "mul_ct": mul_ct, "add_ct": max(degree - 1, 1) if degree != 1 else 0,
            "add_pt": 1, "rotate": 0, "bootstrap": 0}


def eval_poly_ct(ctx: HeContext, ct: CtVec, coeffs: Sequence[float]) -> CtVec:
    """Slotwise ``sum coeffs[k] x^k`` on a ciphertext.

    Power ladder x^2 = x*x, x^4 = x^2*x^2; odd terms multiply the scaled
    ``c*x`` into an even power so the scalar costs no extra level.  The
    result always sits ``poly_depth(degree)`` levels below the input.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    degree = len(coeffs) - 1
    depth = poly_depth(degree)
    if ct.level < depth:
        raise DepthExhausted(f"degree-{degree} evaluation needs {depth} levels, have {ct.level}")
    const = lambda c: PtVec(np.full(ctx.n_slots, c))
    target = ct.level - depth

    if degree == 0:
        return ctx.add_pt(ctx.sub_ct(ct, ct), const(coeffs[0]))

    terms = [ctx.mul_pt(ct, const(coeffs[1]))]
    if degree >= 2:
        x2 = ctx.mul_ct(ct, ct)
        terms.append(ctx.mul_pt(x2, const(coeffs[2])))
    if degree >= 3:
        c3x = ctx.mul_pt(ct, const(coeffs[3]))
        terms.append(ctx.mul_ct(x2, c3x))
    if degree >= 4:
        x4 = ctx.mul_ct(x2, x2)
        terms.append(ctx.mul_pt(x4, const(coeffs[4])))
    if degree == 5:
        c5x = ctx.level_drop(ctx.mul_pt(ct, const(coeffs[5])), x4.level)
        terms.append(ctx.mul_ct(x4, c5x))

    terms = [t if t.level == target else ctx.level_drop(t, target) for t in terms]
    return ctx.add_pt(ctx.sum_ct(terms), const(coeffs[0]))
