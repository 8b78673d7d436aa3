"""Synthesis and pointwise 2-jets of Gaussian random spherical eigenfunctions.

A degree-ell field is

    f(x) = (2*ell + 1)^(-1/2) * sum_m a_m * Y_m(x),       a_m iid N(0, 1),

over a real orthonormal eigenbasis of the sphere Laplacian with eigenvalue
-ell*(ell+1). The basis is normalized against the *uniform probability*
measure on the sphere (the geodesy "4 pi" convention), which makes

    E[f(x) f(y)] = P_ell(cos d(x, y)),     E[f(x)^2] = 1,

with P_ell the Legendre polynomial and d the geodesic distance.

Concretely, with Q_lm(x) = sqrt((2l+1) (l-m)!/(l+m)!) * P_lm(x) the
normalized associated Legendre functions (m = 0..l, no Condon-Shortley
phase), the basis at (theta, phi) is

    Y_0      = Q_l0(cos theta)
    Y_{+m}   = sqrt(2) * Q_lm(cos theta) * cos(m phi)
    Y_{-m}   = sqrt(2) * Q_lm(cos theta) * sin(m phi)

and sum_m Y_m^2 = 2l+1 pointwise (addition theorem). All normalization is
folded into the recurrences, so evaluation is overflow-free up to the
supported maximum degree of 200.

Derivatives use, per order m,

    d(Q_lm)/dtheta  = (l x Q_lm - e_lm Q_{l-1,m}) / sin(theta),
        e_lm = sqrt((2l+1)(l^2 - m^2)/(2l-1)),
    d2(Q_lm)/dtheta2 = -cot(theta) dQ - (l(l+1) - m^2/sin^2) Q_lm,

the second line being the associated Legendre ODE. The covariant Hessian in
the orthonormal frame (e_theta, e_phi) carries the sphere's Christoffel
corrections:

    H[0,0] = f_tt
    H[0,1] = (f_tp - cot(theta) f_p) / sin(theta)
    H[1,1] = f_pp / sin^2(theta) + cot(theta) f_t

whose trace is the Laplacian, hence -ell*(ell+1) * f exactly.

The coordinate chart degenerates at the poles; jets inside the polar caps of
half-angle 0.2/ell must go through :func:`evaluate_jet_rotated`, which
computes the covariant 2-jet of x -> f(R x) by second differences along
great circles (geodesics, so no Christoffel terms appear).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .sphere import (
    SpherePoint,
    angles_from_vectors,
    check_rotation,
    geodesic_distance,
    geodesic_step,
    tangent_frame,
    unit_vectors,
)

MAX_DEGREE = 200
_CHUNK = 16384

SQRT2 = math.sqrt(2.0)


class PoleProximityError(ValueError):
    """Jet requested inside a polar exclusion cap of the coordinate chart."""


def pole_cap_halfangle(ell: int) -> float:
    """Half-angle of the polar caps where the (theta, phi) chart is unusable."""
    return 0.2 / ell


# ---------------------------------------------------------------------------
# Legendre and normalized associated Legendre evaluation
# ---------------------------------------------------------------------------

def _check_abscissa(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + 1e-12):
        raise ValueError("abscissa must lie in [-1, 1]")
    return np.clip(x, -1.0, 1.0)


def legendre(ell: int, x):
    """Legendre polynomial P_ell(x) on [-1, 1] by the three-term recurrence.

    Accepts scalars or arrays; P_ell(1) = 1 for every degree.
    """
    if ell < 0:
        raise ValueError("degree must be >= 0")
    x = _check_abscissa(x)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    p_prev = np.ones_like(x)
    if ell == 0:
        return float(p_prev[0]) if scalar else p_prev
    p_cur = x.copy()
    for n in range(1, ell):
        p_next = ((2 * n + 1) * x * p_cur - n * p_prev) / (n + 1)
        p_prev, p_cur = p_cur, p_next
    return float(p_cur[0]) if scalar else p_cur


@lru_cache(maxsize=64)
def _recurrence_tables(ell: int):
    """Degree-climb coefficients for the normalized functions, cached per ell.

    a[L, m], b[L, m] advance Q_{L,m} -> Q_{L+1,m}; dfac[L] advances the
    diagonal Q_{L-1,L-1} -> Q_{L,L}; e[m] feeds the theta-derivative.
    """
    L = np.arange(ell + 1, dtype=float)[:, None]
    m = np.arange(ell + 1, dtype=float)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.sqrt((2 * L + 1) * (2 * L + 3) / ((L + 1 - m) * (L + 1 + m)))
        b = np.sqrt(
            (2 * L + 3) * (L - m) * (L + m)
            / np.where(L > 0, (2 * L - 1), 1.0)
            / ((L + 1 - m) * (L + 1 + m))
        )
    a = np.where(m <= L, a, 0.0)
    b = np.where(m <= L, np.nan_to_num(b), 0.0)
    dfac = np.sqrt((2 * L[:, 0] + 1) / np.maximum(2 * L[:, 0], 1.0))
    if ell >= 1:
        e = np.sqrt((2 * ell + 1) * (ell * ell - np.arange(ell + 1) ** 2) / (2 * ell - 1))
    else:
        e = np.zeros(1)
    return a, b, dfac, e


def _band_matrix(ell: int, x: np.ndarray):
    """Normalized associated Legendre rows Q_{ell,m}(x) and Q_{ell-1,m}(x).

    x: 1-D array of abscissas. Returns two arrays of shape (ell+1, len(x)).
    """
    a, b, dfac, _ = _recurrence_tables(ell)
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    n = x.shape[0]
    cur = np.zeros((ell + 1, n))
    prev = np.zeros((ell + 1, n))
    cur[0] = 1.0
    diag = np.ones(n)
    for deg in range(ell):
        rows = slice(0, deg + 1)
        nxt = a[deg, rows][:, None] * (x * cur[rows]) - b[deg, rows][:, None] * prev[rows]
        prev[rows] = cur[rows]
        cur[rows] = nxt
        diag = diag * s * dfac[deg + 1]
        cur[deg + 1] = diag
    return cur, prev


def associated_legendre_band(ell: int, x: float) -> np.ndarray:
    """Normalized associated Legendre values Q_{ell,m}(x) for m = 0..ell.

    Normalization is sqrt((2*ell+1) (ell-m)!/(ell+m)!) P_lm(x), so the m = 0
    entry is sqrt(2*ell+1) * P_ell(x) and sum_m (2 - delta_m0) Q^2 = 2*ell+1.
    Stable (no factorial overflow) for every supported degree.
    """
    if ell < 0:
        raise ValueError("degree must be >= 0")
    if ell > MAX_DEGREE:
        raise ValueError(f"degrees above {MAX_DEGREE} are unsupported")
    xa = _check_abscissa(x)
    band, _ = _band_matrix(ell, np.atleast_1d(xa))
    return band[:, 0].copy()


# ---------------------------------------------------------------------------
# Random eigenfunctions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RandomEigenfunction:
    """A degree-ell Gaussian eigenfunction: 2*ell+1 coefficients plus its seed.

    coefficients[k] multiplies the basis function of order m = k - ell
    (sin(|m| phi) branch for m < 0, cos(m phi) branch for m > 0).
    """

    degree: int
    coefficients: np.ndarray
    seed: int

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.degree > MAX_DEGREE:
            raise ValueError(f"degrees above {MAX_DEGREE} are unsupported")
        coeffs = np.asarray(self.coefficients, dtype=float)
        if coeffs.shape != (2 * self.degree + 1,):
            raise ValueError(
                f"expected {2 * self.degree + 1} coefficients, got {coeffs.shape}"
            )
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "seed", int(self.seed))

    def cos_sin_weights(self):
        """Per-order longitude weights (c_m, d_m), m = 0..degree.

        f = (2l+1)^(-1/2) sum_m Q_lm(cos theta) (c_m cos(m phi) + d_m sin(m phi)).
        """
        ell = self.degree
        c = np.empty(ell + 1)
        d = np.zeros(ell + 1)
        c[0] = self.coefficients[ell]
        c[1:] = SQRT2 * self.coefficients[ell + 1:]
        d[1:] = SQRT2 * self.coefficients[ell - 1::-1]
        return c, d


def _coefficient_key(seed: int, ell: int, m_index: int) -> int:
    # 128-bit Philox key: low word = user seed, high word = (ell, m) tag.
    low = seed & 0xFFFFFFFFFFFFFFFF
    high = (ell << 16) | m_index
    return low | (high << 64)


def synthesize(ell: int, seed: int) -> RandomEigenfunction:
    """Draw a random eigenfunction with iid standard Gaussian coefficients.

    Each coefficient comes from its own counter-based (Philox) stream keyed
    by (seed, ell, m), so regeneration is bit-exact and independent of
    evaluation order or parallelism.
    """
    if ell < 1:
        raise ValueError("degree must be >= 1")
    coeffs = np.empty(2 * ell + 1)
    for m_index in range(2 * ell + 1):
        bits = np.random.Philox(key=_coefficient_key(seed, ell, m_index))
        coeffs[m_index] = np.random.Generator(bits).standard_normal()
    return RandomEigenfunction(degree=ell, coefficients=coeffs, seed=seed)


def theoretical_covariance(ell: int, x: SpherePoint, y: SpherePoint) -> float:
    """Covariance E[f(x) f(y)] = P_ell(cos d(x, y)) of the ensemble."""
    return float(legendre(ell, math.cos(geodesic_distance(x, y))))


# ---------------------------------------------------------------------------
# Pointwise evaluation
# ---------------------------------------------------------------------------

def evaluate_values(field: RandomEigenfunction, thetas, phis) -> np.ndarray:
    """Field values at arbitrary points, vectorized.

    Points sharing a colatitude share one associated-Legendre band
    (O(ell^2) per distinct band, O(ell) per node), so latitude-band grids
    get the fast path automatically.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    if thetas.shape != phis.shape:
        raise ValueError("thetas and phis must have equal shapes")
    ell = field.degree
    uniq, inverse = np.unique(thetas, return_inverse=True)
    band, _ = _band_matrix(ell, np.cos(uniq))
    c, d = field.cos_sin_weights()
    out = np.empty(thetas.shape[0])
    for start in range(0, thetas.shape[0], _CHUNK):
        sl = slice(start, min(start + _CHUNK, thetas.shape[0]))
        inv = inverse[sl]
        phi = phis[sl]
        cphi, sphi = np.cos(phi), np.sin(phi)
        cosm = np.ones_like(phi)
        sinm = np.zeros_like(phi)
        acc = c[0] * band[0, inv]
        for m in range(1, ell + 1):
            cosm, sinm = cosm * cphi - sinm * sphi, sinm * cphi + cosm * sphi
            acc += band[m, inv] * (c[m] * cosm + d[m] * sinm)
        out[sl] = acc
    return out / math.sqrt(2 * ell + 1)


def _jet_batch(field: RandomEigenfunction, thetas: np.ndarray, phis: np.ndarray):
    """Value, frame gradient and covariant Hessian entries at many points.

    Returns (f, g1, g2, h11, h12, h22), each shape (n,). Callers must keep
    points outside the polar caps; sin(theta) is trusted to be positive.
    """
    ell = field.degree
    _, _, _, e = _recurrence_tables(ell)
    c, d = field.cos_sin_weights()
    n = thetas.shape[0]
    out = [np.empty(n) for _ in range(6)]
    morder = np.arange(ell + 1, dtype=float)[:, None]
    lam = ell * (ell + 1.0)
    norm = 1.0 / math.sqrt(2 * ell + 1)
    for start in range(0, n, _CHUNK):
        sl = slice(start, min(start + _CHUNK, n))
        th, ph = thetas[sl], phis[sl]
        x, s = np.cos(th), np.sin(th)
        cot = x / s
        Q, Qm1 = _band_matrix(ell, x)
        dQ = (ell * x * Q - e[:, None] * Qm1) / s
        d2Q = -cot * dQ - (lam - morder**2 / s**2) * Q
        # longitude factor rows via the angle-addition recurrence
        cphi, sphi = np.cos(ph), np.sin(ph)
        G = np.empty_like(Q)
        Gp = np.empty_like(Q)
        cosm = np.ones_like(ph)
        sinm = np.zeros_like(ph)
        G[0] = c[0]
        Gp[0] = 0.0
        for m in range(1, ell + 1):
            cosm, sinm = cosm * cphi - sinm * sphi, sinm * cphi + cosm * sphi
            G[m] = c[m] * cosm + d[m] * sinm
            Gp[m] = m * (d[m] * cosm - c[m] * sinm)
        f = np.einsum("mn,mn->n", Q, G)
        ft = np.einsum("mn,mn->n", dQ, G)
        fp = np.einsum("mn,mn->n", Q, Gp)
        ftt = np.einsum("mn,mn->n", d2Q, G)
        ftp = np.einsum("mn,mn->n", dQ, Gp)
        fpp = -np.einsum("mn,mn->n", morder**2 * Q, G)
        out[0][sl] = f
        out[1][sl] = ft
        out[2][sl] = fp / s
        out[3][sl] = ftt
        out[4][sl] = (ftp - cot * fp) / s
        out[5][sl] = fpp / s**2 + cot * ft
    return tuple(norm * arr for arr in out)


@dataclass(frozen=True)
class Jet2:
    """Value, orthonormal-frame gradient and covariant Hessian at a point."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray

    def __post_init__(self):
        grad = np.asarray(self.gradient, dtype=float).reshape(2)
        hess = np.asarray(self.hessian, dtype=float).reshape(2, 2)
        asym = abs(hess[0, 1] - hess[1, 0])
        if asym > 1e-10 * (1.0 + np.abs(hess).max()):
            raise ValueError("hessian must be symmetric")
        grad.setflags(write=False)
        hess.setflags(write=False)
        object.__setattr__(self, "gradient", grad)
        object.__setattr__(self, "hessian", hess)


def evaluate_jet(field: RandomEigenfunction, p: SpherePoint) -> Jet2:
    """Analytic 2-jet at a point of the main chart.

    Raises :class:`PoleProximityError` inside the polar exclusion caps,
    where callers must switch to :func:`evaluate_jet_rotated`.
    """
    eps = pole_cap_halfangle(field.degree)
    if p.theta < eps or p.theta > math.pi - eps:
        raise PoleProximityError(
            f"point at colatitude {p.theta:.6f} lies inside a polar cap "
            f"(half-angle {eps:.6f}); use evaluate_jet_rotated"
        )
    f, g1, g2, h11, h12, h22 = _jet_batch(
        field, np.array([p.theta]), np.array([p.phi])
    )
    return Jet2(
        value=float(f[0]),
        gradient=np.array([g1[0], g2[0]]),
        hessian=np.array([[h11[0], h12[0]], [h12[0], h22[0]]]),
    )


def _fd_jet_batch(
    field: RandomEigenfunction,
    rotation: np.ndarray,
    thetas: np.ndarray,
    phis: np.ndarray,
    step: float,
):
    """Geodesic finite-difference 2-jet of x -> f(R x) at many chart points.

    Second differences run along great circles through each point, so the
    results are covariant (no Christoffel terms needed). Shapes as
    :func:`_jet_batch`.
    """
    v = unit_vectors(thetas, phis)
    e1, e2 = tangent_frame(thetas, phis)
    ediag = (e1 + e2) / SQRT2
    stencil = [v]
    for direction in (e1, e2, ediag):
        stencil.append(geodesic_step(v, direction, np.full(thetas.shape, step)))
        stencil.append(geodesic_step(v, direction, np.full(thetas.shape, -step)))
    pts = np.concatenate(stencil, axis=0)
    rth, rph = angles_from_vectors(pts @ rotation.T)
    vals = evaluate_values(field, rth, rph)
    n = thetas.shape[0]
    h0 = vals[:n]
    p1, m1 = vals[n : 2 * n], vals[2 * n : 3 * n]
    p2, m2 = vals[3 * n : 4 * n], vals[4 * n : 5 * n]
    pd, md = vals[5 * n : 6 * n], vals[6 * n : 7 * n]
    inv2 = 1.0 / (2.0 * step)
    invsq = 1.0 / (step * step)
    g1 = (p1 - m1) * inv2
    g2 = (p2 - m2) * inv2
    h11 = (p1 - 2.0 * h0 + m1) * invsq
    h22 = (p2 - 2.0 * h0 + m2) * invsq
    hdd = (pd - 2.0 * h0 + md) * invsq
    h12 = hdd - 0.5 * (h11 + h22)
    return h0, g1, g2, h11, h12, h22


def evaluate_jet_rotated(
    field: RandomEigenfunction,
    p: SpherePoint,
    rotation: np.ndarray,
    step: float | None = None,
) -> Jet2:
    """2-jet of the rotated field x -> f(R x) at p, by geodesic differences.

    Isotropy makes the rotated field another copy of the ensemble, so this
    is the standard route to jets inside the polar caps: pick R moving the
    cap to the equator and evaluate there. p itself must be away from the
    chart poles so its frame exists.
    """
    rotation = check_rotation(rotation)
    if math.sin(p.theta) < 1e-8:
        raise ValueError("rotated-chart jets need a non-polar chart point")
    if step is None:
        step = 1e-4 / field.degree
    f, g1, g2, h11, h12, h22 = _fd_jet_batch(
        field, rotation, np.array([p.theta]), np.array([p.phi]), step
    )
    return Jet2(
        value=float(f[0]),
        gradient=np.array([g1[0], g2[0]]),
        hessian=np.array([[h11[0], h12[0]], [h12[0], h22[0]]]),
    )


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatLonGrid:
    """Cell-centered latitude bands: theta_i = (i+1/2) pi/n_lat, phi_j = 2 pi j/n_lon."""

    n_lat: int
    n_lon: int

    def __post_init__(self):
        if self.n_lat < 1 or self.n_lon < 1:
            raise ValueError("grid must have at least one band and one longitude")

    def node_angles(self):
        i = np.arange(self.n_lat)
        j = np.arange(self.n_lon)
        thetas = (i[:, None] + 0.5) * math.pi / self.n_lat
        phis = j[None, :] * 2.0 * math.pi / self.n_lon
        thetas, phis = np.broadcast_arrays(thetas, phis)
        return thetas.ravel(), phis.ravel()


@dataclass(frozen=True)
class GridSamples:
    """Field values over the nodes of a grid geometry."""

    geometry: object
    thetas: np.ndarray
    phis: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for name in ("thetas", "phis", "values"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.thetas.shape == self.phis.shape == self.values.shape):
            raise ValueError("node arrays must have equal shapes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")


def evaluate_grid(field: RandomEigenfunction, geometry) -> GridSamples:
    """Evaluate the field on a :class:`LatLonGrid` or any geometry exposing node_angles()."""
    thetas, phis = geometry.node_angles()
    values = evaluate_values(field, thetas, phis)
    return GridSamples(geometry=geometry, thetas=thetas, phis=phis, values=values)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def field_to_dict(field: RandomEigenfunction) -> dict:
    return {
        "degree": field.degree,
        "seed": field.seed,
        "coefficients": [float(x) for x in field.coefficients],
    }


def field_from_dict(data: dict) -> RandomEigenfunction:
    return RandomEigenfunction(
        degree=int(data["degree"]),
        coefficients=np.asarray(data["coefficients"], dtype=float),
        seed=int(data["seed"]),
    )


def save_field(field: RandomEigenfunction, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(field_to_dict(field), fh, indent=2)
        fh.write("\n")


def load_field(path) -> RandomEigenfunction:
    with open(path) as fh:
        return field_from_dict(json.load(fh))


def write_grid_csv(samples: GridSamples, path) -> None:
    """Persist grid samples as CSV rows (node index, theta, phi, value)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node", "theta", "phi", "value"])
        for i in range(samples.values.shape[0]):
            writer.writerow(
                [
                    i,
                    format(samples.thetas[i], ".17g"),
                    format(samples.phis[i], ".17g"),
                    format(samples.values[i], ".17g"),
                ]
            )
