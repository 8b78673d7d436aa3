"""Closed-form predictions for excursion-set Euler characteristics.

For a unit-variance degree-ell field the expected Euler characteristic of
the superlevel set {f >= u} is exact at every degree:

    E[chi_u] = sqrt(2/pi) * exp(-u^2/2) * u * ell(ell+1)/2 + 2*(1 - Phi(u)).

Fluctuations around it are governed, to leading order in ell, by the
quartic-Gaussian kernel

    p(t) = (-t^4 + 4 t^2 - 1) * exp(-t^2/2),

whose interval integrals W(I) = int_I p drive

    Cov[chi_{I1}, chi_{I2}] = ell^3/(8 pi) * W(I1) * W(I2) + O(ell^(5/2)).

p has the elementary antiderivative t (t^2 - 1) exp(-t^2/2), so W is closed
form for any (possibly infinite) endpoints; for half-lines [u, inf) the
variance becomes ell^3/(8 pi) * [H3(u) + 2 H1(u)]^2 * exp(-u^2) with
probabilists' Hermite polynomials H_q.

The same leading constant is reproduced here by a second, independent
route: two- and four-dimensional Gaussian integrals (p1, p2, g2, g3
below) evaluated by tensor Gauss-Hermite quadrature after completing the
square in the exponents, against their closed forms

    p1(t) = sqrt(2/pi) (t^2 - 1) e^{-t^2/2}
    p2(t) = sqrt(2/pi) (t^4 + t^2 - 4) e^{-t^2/2}
    g2(t1, t2) = -3 p1 p1 + (1/2) p2 p1 + (1/2) p1 p2
    g3(t) = (3/8) p1 - (1/8) p2

and the combination

    (25/4) W1(I1) W1(I2) - (5/4) W2(I1) W1(I2) - (5/4) W1(I1) W2(I2)
        + (1/4) W2(I1) W2(I2)   =   (1/(2 pi)) W(I1) W(I2),

with W_j(I) = int_I p_j. `identity_suite` checks every link of that chain
at fixed tolerances and is exposed through the `verify-analytic` CLI
subcommand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import integrate
from scipy.special import erfc

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
INF = math.inf


class QuadratureConvergenceError(RuntimeError):
    """Successive Gauss-Hermite refinements failed to agree."""


# ---------------------------------------------------------------------------
# Thresholds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdInterval:
    """An interval of field values with extended-real endpoints."""

    lower: float
    upper: float

    def __post_init__(self):
        lower, upper = float(self.lower), float(self.upper)
        if math.isnan(lower) or math.isnan(upper):
            raise ValueError("interval endpoints must not be NaN")
        if lower > upper:
            raise ValueError(f"need lower <= upper, got [{lower}, {upper}]")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @staticmethod
    def half_line(u: float) -> "ThresholdInterval":
        return ThresholdInterval(u, INF)

    @staticmethod
    def full_line() -> "ThresholdInterval":
        return ThresholdInterval(-INF, INF)

    def contains(self, values):
        values = np.asarray(values)
        return (values >= self.lower) & (values <= self.upper)

    def label(self) -> str:
        if self.upper == INF and self.lower != -INF:
            return f"u={self.lower:g}"
        return f"I=[{self.lower:g},{self.upper:g}]"


class LKCIndex(IntEnum):
    """Which intrinsic-volume variance to predict: 0 EPC, 1 half boundary length, 2 area."""

    EPC = 0
    BOUNDARY_LENGTH = 1
    AREA = 2


# ---------------------------------------------------------------------------
# Hermite polynomials and Gaussian Minkowski densities
# ---------------------------------------------------------------------------

def gaussian_tail(u):
    """1 - Phi(u), the standard normal upper-tail probability."""
    u = np.asarray(u, dtype=float)
    out = 0.5 * erfc(u / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


def gaussian_density(u):
    u = np.asarray(u, dtype=float)
    out = np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)
    return float(out) if out.ndim == 0 else out


def hermite(q: int, u):
    """Probabilists' Hermite polynomial H_q(u); q = -1 gives 1 - Phi(u)."""
    if q < -1:
        raise ValueError("order must be >= -1")
    if q == -1:
        return gaussian_tail(u)
    u = np.asarray(u, dtype=float)
    h_prev = np.ones_like(u)
    if q == 0:
        return float(h_prev) if u.ndim == 0 else h_prev
    h_cur = u.copy()
    for n in range(1, q):
        h_prev, h_cur = h_cur, u * h_cur - n * h_prev
    return float(h_cur) if u.ndim == 0 else h_cur


def _hermite_derivative(q: int, u):
    """d/du H_q(u) = q H_{q-1}(u) for q >= 1; identically 0 for q = 0."""
    if q == 0:
        u = np.asarray(u, dtype=float)
        z = np.zeros_like(u)
        return float(z) if u.ndim == 0 else z
    return q * hermite(q - 1, u)


def gaussian_minkowski_rho(j: int, u):
    """Gaussian Minkowski density rho_j(u).

    rho_0(u) = 1 - Phi(u); for j >= 1,
    rho_j(u) = (2 pi)^{-(j+1)/2} H_{j-1}(u) exp(-u^2/2).
    """
    if j < 0:
        raise ValueError("index must be >= 0")
    if j == 0:
        return gaussian_tail(u)
    u = np.asarray(u, dtype=float)
    out = (2.0 * math.pi) ** (-(j + 1) / 2.0) * hermite(j - 1, u) * np.exp(-0.5 * u * u)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Exact expectation
# ---------------------------------------------------------------------------

def expected_epc(ell: int, u: float) -> float:
    """Expected Euler characteristic of {f >= u}; exact for every degree.

    Tends to 2 (the sphere's Euler characteristic) as u -> -inf and to 0 as
    u -> +inf.
    """
    if ell < 1:
        raise ValueError("degree must be >= 1")
    u = float(u)
    if math.isinf(u):
        return 2.0 if u < 0 else 0.0
    return (
        SQRT_2_OVER_PI * math.exp(-0.5 * u * u) * u * ell * (ell + 1) / 2.0
        + 2.0 * gaussian_tail(u)
    )


def expected_epc_interval(ell: int, interval: ThresholdInterval) -> float:
    """Expected Euler characteristic of f^{-1}(I) for a general interval.

    chi(f^{-1}[a, b]) = chi({f >= a}) - chi({f >= b}) at generic levels (the
    shared boundary is a union of circles, contributing nothing), so the
    expectation is the difference of two half-line values.
    """
    return expected_epc(ell, interval.lower) - expected_epc(ell, interval.upper)


def gkf_expected_epc(ell: int, u: float) -> float:
    """Expectation reassembled from the Minkowski densities (consistency route).

    chi-density rho_0 enters with weight 2 (the sphere's EPC) and rho_2 with
    the metric-scaled area 4 pi ell(ell+1)/2; the boundary term vanishes for
    a closed surface.
    """
    area_scaled = 4.0 * math.pi * ell * (ell + 1) / 2.0
    return 2.0 * gaussian_minkowski_rho(0, u) + area_scaled * gaussian_minkowski_rho(2, u)


# ---------------------------------------------------------------------------
# Leading-order covariance kernel
# ---------------------------------------------------------------------------

def p_kernel(t):
    """Covariance kernel p(t) = (-t^4 + 4 t^2 - 1) exp(-t^2/2)."""
    t = np.asarray(t, dtype=float)
    out = (-(t**4) + 4.0 * t * t - 1.0) * np.exp(-0.5 * t * t)
    return float(out) if out.ndim == 0 else out


def _p_antiderivative(t: float) -> float:
    # d/dt [t (t^2 - 1) e^{-t^2/2}] = p(t); decays to 0 at +-inf
    if math.isinf(t):
        return 0.0
    return t * (t * t - 1.0) * math.exp(-0.5 * t * t)


def interval_weight(interval: ThresholdInterval) -> float:
    """W(I) = int_I p(t) dt via the global closed-form antiderivative."""
    return _p_antiderivative(interval.upper) - _p_antiderivative(interval.lower)


def interval_weight_quad(interval: ThresholdInterval) -> float:
    """Adaptive-quadrature route for W(I); must agree with the closed form."""
    val, _ = integrate.quad(p_kernel, interval.lower, interval.upper, limit=200)
    return val


def leading_covariance(
    ell: int, interval1: ThresholdInterval, interval2: ThresholdInterval
) -> float:
    """Leading-order covariance ell^3/(8 pi) W(I1) W(I2) (sign included)."""
    if ell < 1:
        raise ValueError("degree must be >= 1")
    return ell**3 / (8.0 * math.pi) * interval_weight(interval1) * interval_weight(interval2)


def leading_variance_halfline(ell: int, u: float) -> float:
    """Leading-order variance for {f >= u}: ell^3/(8 pi) [H3 + 2 H1]^2 e^{-u^2}.

    H3(u) + 2 H1(u) = u^3 - u, so this vanishes at u in {-1, 0, 1}, where
    fluctuations are dominated by the subleading O(ell^(5/2)) term.
    """
    if ell < 1:
        raise ValueError("degree must be >= 1")
    h = hermite(3, u) + 2.0 * hermite(1, u)
    return ell**3 / (8.0 * math.pi) * h * h * math.exp(-u * u)


_LKC_CONSTANTS = {LKCIndex.EPC: 0.25, LKCIndex.AREA: 1.0}


def lkc_variance_leading(
    k: LKCIndex | int, ell: int, u: float, const_k1: float = 1.0
) -> float:
    """Leading variance of the k-th intrinsic volume of the excursion set.

    ell^(3-2k) * c_k * [H_{3-k}(u) + H'_{2-k}(u)]^2 * phi(u)^2 with c_0 = 1/4,
    c_2 = 1; the boundary-length constant c_1 is not pinned down analytically
    and is exposed as `const_k1`. k = 0 coincides with
    :func:`leading_variance_halfline`.
    """
    k = LKCIndex(k)
    if ell < 1:
        raise ValueError("degree must be >= 1")
    c = _LKC_CONSTANTS.get(k, const_k1)
    h = hermite(3 - k, u) + _hermite_derivative(2 - k, u)
    phi = gaussian_density(u)
    return ell ** (3 - 2 * int(k)) * c * h * h * phi * phi


# ---------------------------------------------------------------------------
# Gaussian-integral machinery: closed forms
# ---------------------------------------------------------------------------

def p1_closed(t):
    """sqrt(2/pi) (t^2 - 1) e^{-t^2/2}."""
    t = np.asarray(t, dtype=float)
    out = SQRT_2_OVER_PI * (t * t - 1.0) * np.exp(-0.5 * t * t)
    return float(out) if out.ndim == 0 else out


def p2_closed(t):
    """sqrt(2/pi) (t^4 + t^2 - 4) e^{-t^2/2}."""
    t = np.asarray(t, dtype=float)
    out = SQRT_2_OVER_PI * (t**4 + t * t - 4.0) * np.exp(-0.5 * t * t)
    return float(out) if out.ndim == 0 else out


def _p1_antiderivative(t: float) -> float:
    if math.isinf(t):
        return 0.0
    return -SQRT_2_OVER_PI * t * math.exp(-0.5 * t * t)


def _p2_antiderivative(t: float) -> float:
    if math.isinf(t):
        return 0.0
    return -SQRT_2_OVER_PI * t * (t * t + 4.0) * math.exp(-0.5 * t * t)


def _weight_p1(interval: ThresholdInterval) -> float:
    return _p1_antiderivative(interval.upper) - _p1_antiderivative(interval.lower)


def _weight_p2(interval: ThresholdInterval) -> float:
    return _p2_antiderivative(interval.upper) - _p2_antiderivative(interval.lower)


def g2_identity(t1, t2):
    """g2 rebuilt from the closed forms of p1 and p2."""
    a1, a2 = p1_closed(t1), p1_closed(t2)
    b1, b2 = p2_closed(t1), p2_closed(t2)
    return -3.0 * a1 * a2 + 0.5 * b1 * a2 + 0.5 * a1 * b2


def g3_identity(t):
    """g3 = (3/8) p1 - (1/8) p2, from the closed forms."""
    return 0.375 * p1_closed(t) - 0.125 * p2_closed(t)


def combined_coefficient(
    interval1: ThresholdInterval, interval2: ThresholdInterval
) -> float:
    """The four-term p1/p2 moment combination driving the covariance.

    (25/4) W11 W21 - (5/4) W12 W21 - (5/4) W11 W22 + (1/4) W12 W22 with
    Wij = int_{Ii} p_j; algebraically equal to (1/(2 pi)) W(I1) W(I2), and
    leading_covariance = ell^3/4 times this.
    """
    w11, w12 = _weight_p1(interval1), _weight_p2(interval1)
    w21, w22 = _weight_p1(interval2), _weight_p2(interval2)
    return (
        6.25 * w11 * w21
        - 1.25 * w12 * w21
        - 1.25 * w11 * w22
        + 0.25 * w12 * w22
    )


# ---------------------------------------------------------------------------
# Gaussian-integral machinery: tensor Gauss-Hermite quadrature
# ---------------------------------------------------------------------------
#
# All four integrals share the weight exp{-(3/2)t^2} exp{-(x1^2+x2^2)/2
# + sqrt(8) t x1}. Completing the square (x1 = sqrt(2)(y1 + t),
# x2 = sqrt(2) y2) turns the weight into e^{-t^2/2} e^{-y1^2-y2^2} with
# Jacobian 2, which tensor Gauss-Hermite handles directly. The polynomial
# parts are evaluated verbatim in the original variables, keeping these
# quadratures an oracle independent of the closed forms above.

def _gh_nodes(n: int):
    return hermgauss(n)


def _p1_gh(t: float, n: int) -> float:
    y, w = _gh_nodes(n)
    x1 = math.sqrt(2.0) * (y + t)
    x2 = math.sqrt(2.0) * y
    poly = (
        x1[:, None] * t * math.sqrt(8.0) - x1[:, None] ** 2 - x2[None, :] ** 2
    )
    total = float(np.einsum("i,j,ij->", w, w, poly))
    return 2.0 * math.exp(-0.5 * t * t) / (2.0 * math.pi) ** 1.5 * total


def _p2_gh(t: float, n: int) -> float:
    y, w = _gh_nodes(n)
    x1 = math.sqrt(2.0) * (y + t)
    x2 = math.sqrt(2.0) * y
    poly = (
        x1[:, None] * t * math.sqrt(8.0) - x1[:, None] ** 2 - x2[None, :] ** 2
    ) * (3.0 * t - math.sqrt(2.0) * x1[:, None]) ** 2
    total = float(np.einsum("i,j,ij->", w, w, poly))
    return 2.0 * math.exp(-0.5 * t * t) / (2.0 * math.pi) ** 1.5 * total


def _g3_gh(t: float, n: int) -> float:
    y, w = _gh_nodes(n)
    z1 = math.sqrt(2.0) * (y + t)
    z2 = math.sqrt(2.0) * y
    poly = (
        z1[:, None] * t * math.sqrt(8.0) - z1[:, None] ** 2 - z2[None, :] ** 2
    ) * (3.0 - (3.0 * t - math.sqrt(2.0) * z1[:, None]) ** 2)
    total = float(np.einsum("i,j,ij->", w, w, poly))
    return 0.125 * 2.0 * math.exp(-0.5 * t * t) / (2.0 * math.pi) ** 1.5 * total


def _g2_gh(t1: float, t2: float, n: int) -> float:
    y, w = _gh_nodes(n)
    z1 = math.sqrt(2.0) * (y + t1)
    w1 = math.sqrt(2.0) * (y + t2)
    z2 = math.sqrt(2.0) * y
    pz = z1[:, None] * t1 * math.sqrt(8.0) - z1[:, None] ** 2 - z2[None, :] ** 2
    pw = w1[:, None] * t2 * math.sqrt(8.0) - w1[:, None] ** 2 - z2[None, :] ** 2
    cross = (
        -6.0
        + (3.0 * t1 - math.sqrt(2.0) * z1[:, None]) ** 2
        + (3.0 * t2 - math.sqrt(2.0) * w1[None, :]) ** 2
    )
    # full 4-D tensor contraction sum_{ijkl} w_i w_j w_k w_l pz_ij pw_kl cross_ik
    total = float(
        np.einsum("i,j,k,l,ij,kl,ik->", w, w, w, w, pz, pw, cross, optimize=True)
    )
    return (
        0.5
        * 4.0
        * math.exp(-0.5 * (t1 * t1 + t2 * t2))
        / (2.0 * math.pi) ** 3
        * total
    )


def _refined(evaluator, args, n0: int, tol: float) -> float:
    coarse = evaluator(*args, n0)
    fine = evaluator(*args, 2 * n0)
    if abs(fine - coarse) > tol:
        raise QuadratureConvergenceError(
            f"Gauss-Hermite results at {n0} and {2 * n0} nodes differ by "
            f"{abs(fine - coarse):.3e} (> {tol:.0e})"
        )
    return fine


def p1_quadrature(t: float, nodes: int = 40) -> float:
    """p1(t) as a 2-D Gaussian integral by tensor Gauss-Hermite quadrature."""
    return _refined(_p1_gh, (float(t),), nodes, 1e-8)


def p2_quadrature(t: float, nodes: int = 40) -> float:
    """p2(t) as a 2-D Gaussian integral by tensor Gauss-Hermite quadrature."""
    return _refined(_p2_gh, (float(t),), nodes, 1e-8)


def g3_quadrature(t: float, nodes: int = 40) -> float:
    """g3(t) as a 2-D Gaussian integral by tensor Gauss-Hermite quadrature."""
    return _refined(_g3_gh, (float(t),), nodes, 1e-8)


def g2_quadrature(t1: float, t2: float, nodes: int = 24) -> float:
    """g2(t1, t2) as a 4-D Gaussian integral by tensor Gauss-Hermite quadrature."""
    return _refined(_g2_gh, (float(t1), float(t2)), nodes, 1e-7)


# ---------------------------------------------------------------------------
# Prediction records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnalyticPrediction:
    """Expectation plus leading second moments for a pair of thresholds."""

    ell: int
    expectation: float
    leading_variance: float
    leading_covariance: float
    order_remark: str = "remainder O(ell^(5/2)), universal constant"

    def __post_init__(self):
        if self.leading_variance < 0:
            raise ValueError("leading variance must be nonnegative")


def predict(
    ell: int,
    interval: ThresholdInterval,
    other: ThresholdInterval | None = None,
) -> AnalyticPrediction:
    """Bundle expectation, leading variance and pair covariance for reports."""
    other = interval if other is None else other
    var1 = leading_covariance(ell, interval, interval)
    var2 = leading_covariance(ell, other, other)
    cov = leading_covariance(ell, interval, other)
    if cov * cov > var1 * var2 * (1.0 + 1e-12) + 1e-12:
        raise AssertionError("leading moments violate the perfect-correlation structure")
    return AnalyticPrediction(
        ell=ell,
        expectation=expected_epc_interval(ell, interval),
        leading_variance=var1,
        leading_covariance=cov,
    )


# ---------------------------------------------------------------------------
# Identity suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IdentityCheck:
    name: str
    max_abs_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_error <= self.tolerance


_SUITE_INTERVALS = (
    ThresholdInterval(-INF, INF),
    ThresholdInterval(2.0, INF),
    ThresholdInterval(-INF, 0.4),
    ThresholdInterval(0.5, 2.0),
    ThresholdInterval(-1.0, 1.0),
    ThresholdInterval(-2.0, -0.3),
    ThresholdInterval(1.7, INF),
    ThresholdInterval(-0.8, 2.6),
    ThresholdInterval(0.0, 0.0),
)


def _rel_err(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    if scale < 1e-280:
        return abs(a - b)
    return abs(a - b) / scale


def identity_suite() -> list[IdentityCheck]:
    """Run every analytic cross-check at its pinned tolerance."""
    checks = []
    t_grid = np.linspace(-3.0, 3.0, 25)

    err = max(abs(p1_quadrature(t) - p1_closed(t)) for t in t_grid)
    checks.append(IdentityCheck("p1_closed_vs_quadrature", err, 1e-8))

    err = max(abs(p2_quadrature(t) - p2_closed(t)) for t in t_grid)
    checks.append(IdentityCheck("p2_closed_vs_quadrature", err, 1e-8))

    err = max(abs(g3_quadrature(t) - g3_identity(t)) for t in np.linspace(-3, 3, 13))
    checks.append(IdentityCheck("g3_closed_vs_quadrature", err, 1e-7))

    g_grid = np.linspace(-3.0, 3.0, 5)
    err = max(
        abs(g2_quadrature(t1, t2) - g2_identity(t1, t2))
        for t1 in g_grid
        for t2 in g_grid
    )
    checks.append(IdentityCheck("g2_closed_vs_quadrature", err, 1e-7))

    err = max(
        abs(
            combined_coefficient(i1, i2)
            - interval_weight(i1) * interval_weight(i2) / (2.0 * math.pi)
        )
        for i1 in _SUITE_INTERVALS
        for i2 in _SUITE_INTERVALS
    )
    checks.append(IdentityCheck("combined_vs_simplified", err, 1e-10))

    # compared on the ell-free O(1) scale: a floor of 1 keeps the relative
    # tolerance meaningful where both sides vanish identically
    err = max(
        abs(
            4.0 / ell**3 * leading_covariance(ell, i1, i2)
            - combined_coefficient(i1, i2)
        )
        / max(abs(combined_coefficient(i1, i2)), 1.0)
        for ell in (1, 10, 40)
        for i1 in _SUITE_INTERVALS
        for i2 in _SUITE_INTERVALS
    )
    checks.append(IdentityCheck("combined_vs_covariance", err, 1e-12))

    err = max(
        _rel_err(
            leading_variance_halfline(ell, u),
            leading_covariance(
                ell, ThresholdInterval.half_line(u), ThresholdInterval.half_line(u)
            ),
        )
        for ell in (1, 10, 40)
        for u in np.linspace(-3.0, 3.0, 25)
    )
    checks.append(IdentityCheck("hermite_vs_integral_variance", err, 1e-12))

    err = max(
        _rel_err(
            lkc_variance_leading(LKCIndex.EPC, ell, u),
            leading_variance_halfline(ell, u),
        )
        for ell in (1, 10, 40)
        for u in np.linspace(-3.0, 3.0, 25)
    )
    checks.append(IdentityCheck("lkc0_vs_halfline_variance", err, 1e-12))

    full = ThresholdInterval.full_line()
    checks.append(
        IdentityCheck("p_total_integral_closed", abs(interval_weight(full)), 1e-10)
    )
    checks.append(
        IdentityCheck("p_total_integral_quad", abs(interval_weight_quad(full)), 1e-10)
    )

    err = max(
        abs(interval_weight(i) - interval_weight_quad(i)) for i in _SUITE_INTERVALS
    )
    checks.append(IdentityCheck("interval_weight_closed_vs_quad", err, 1e-10))

    err = max(
        _rel_err(
            leading_covariance(10, i1, i2) ** 2,
            leading_covariance(10, i1, i1) * leading_covariance(10, i2, i2),
        )
        for i1 in _SUITE_INTERVALS
        for i2 in _SUITE_INTERVALS
    )
    checks.append(IdentityCheck("perfect_correlation_structure", err, 1e-12))

    return checks
