"""Shared test oracles, deliberately built from primitive routes.

The finite-difference jet oracle uses only point values along great
circles; the naive synthesis oracle composes the public basis-band
function per node. Both stay independent of the library's analytic
derivative recurrences and banded fast paths.
"""

import math

import numpy as np

from sphepc.harmonics import associated_legendre_band, evaluate_values


def fd_jet_oracle(field, theta, phi, step=None):
    """Geodesic second differences through (theta, phi).

    Returns (value, grad2, hess2x2) in the orthonormal (e_theta, e_phi)
    frame. Second differences along great circles give covariant second
    derivatives directly, so no Christoffel corrections are needed.
    """
    if step is None:
        step = 1e-4 / field.degree
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(phi), math.sin(phi)
    v = np.array([st * cp, st * sp, ct])
    e1 = np.array([ct * cp, ct * sp, -st])
    e2 = np.array([-sp, cp, 0.0])
    ed = (e1 + e2) / math.sqrt(2.0)

    def value_at(vec):
        n = np.linalg.norm(vec)
        th = math.acos(max(-1.0, min(1.0, vec[2] / n)))
        ph = math.atan2(vec[1], vec[0])
        return float(evaluate_values(field, [th], [ph])[0])

    def along(direction, t):
        return value_at(math.cos(t) * v + math.sin(t) * direction)

    f0 = value_at(v)
    d1p, d1m = along(e1, step), along(e1, -step)
    d2p, d2m = along(e2, step), along(e2, -step)
    ddp, ddm = along(ed, step), along(ed, -step)
    g = np.array([(d1p - d1m), (d2p - d2m)]) / (2.0 * step)
    h11 = (d1p - 2.0 * f0 + d1m) / step**2
    h22 = (d2p - 2.0 * f0 + d2m) / step**2
    hdd = (ddp - 2.0 * f0 + ddm) / step**2
    h12 = hdd - 0.5 * (h11 + h22)
    return f0, g, np.array([[h11, h12], [h12, h22]])


def naive_value_oracle(field, theta, phi):
    """Per-node synthesis from the public basis band, no fast paths."""
    ell = field.degree
    band = associated_legendre_band(ell, math.cos(theta))
    coeff = field.coefficients
    total = coeff[ell] * band[0]
    for m in range(1, ell + 1):
        total += (
            math.sqrt(2.0)
            * band[m]
            * (coeff[ell + m] * math.cos(m * phi) + coeff[ell - m] * math.sin(m * phi))
        )
    return total / math.sqrt(2 * ell + 1)


def random_noncap_points(ell, n, rng):
    eps = 0.2 / ell
    theta = rng.uniform(eps * 1.5, math.pi - eps * 1.5, n)
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    return theta, phi
