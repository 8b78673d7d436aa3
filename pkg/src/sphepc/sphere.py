"""Points, frames and rotations on the unit sphere.

Coordinates are colatitude/longitude (theta, phi) with theta in [0, pi]
measured from the north pole and phi in [0, 2*pi). The orthonormal tangent
frame at a non-polar point is (e_theta, e_phi) = (d/dtheta, (sin theta)^-1 d/dphi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SpherePoint:
    """A point on the unit sphere, phi wrapped into [0, 2*pi)."""

    theta: float
    phi: float

    def __post_init__(self):
        theta = float(self.theta)
        phi = float(self.phi)
        if not (math.isfinite(theta) and math.isfinite(phi)):
            raise ValueError("theta and phi must be finite")
        if not (-1e-12 <= theta <= math.pi + 1e-12):
            raise ValueError(f"theta must lie in [0, pi], got {theta}")
        theta = min(max(theta, 0.0), math.pi)
        phi = phi % TWO_PI
        if phi >= TWO_PI:  # guard against 2*pi from rounding of tiny negatives
            phi = 0.0
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)

    def unit_vector(self) -> np.ndarray:
        s = math.sin(self.theta)
        return np.array(
            [s * math.cos(self.phi), s * math.sin(self.phi), math.cos(self.theta)]
        )

    @staticmethod
    def from_unit_vector(v) -> "SpherePoint":
        x, y, z = float(v[0]), float(v[1]), float(v[2])
        r = math.sqrt(x * x + y * y + z * z)
        if not math.isclose(r, 1.0, rel_tol=0.0, abs_tol=1e-9):
            raise ValueError("not a unit vector")
        return SpherePoint(math.acos(min(1.0, max(-1.0, z / r))), math.atan2(y, x))


def geodesic_distance(p: SpherePoint, q: SpherePoint) -> float:
    """Great-circle distance between two points, robust near 0 and pi."""
    u = p.unit_vector()
    v = q.unit_vector()
    return float(math.atan2(np.linalg.norm(np.cross(u, v)), float(np.dot(u, v))))


def unit_vectors(theta, phi) -> np.ndarray:
    """Cartesian coordinates for arrays of (theta, phi); shape (..., 3)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    s = np.sin(theta)
    return np.stack(
        [s * np.cos(phi), s * np.sin(phi), np.cos(theta)], axis=-1
    )


def angles_from_vectors(v: np.ndarray):
    """Inverse of :func:`unit_vectors`; input need not be exactly normalized."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1)
    z = np.clip(v[..., 2] / n, -1.0, 1.0)
    theta = np.arccos(z)
    phi = np.arctan2(v[..., 1], v[..., 0]) % TWO_PI
    return theta, phi


def tangent_frame(theta, phi):
    """Orthonormal frame (e_theta, e_phi) as Cartesian vectors, shape (..., 3).

    Undefined at the poles (sin theta = 0); callers must stay away.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    e_theta = np.stack([ct * cp, ct * sp, -st], axis=-1)
    e_phi = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)
    return e_theta, e_phi


def check_rotation(rotation: np.ndarray) -> np.ndarray:
    """Validate a proper rotation matrix (orthogonal, det = +1)."""
    r = np.asarray(rotation, dtype=float)
    if r.shape != (3, 3):
        raise ValueError("rotation must be a 3x3 matrix")
    if not np.allclose(r.T @ r, np.eye(3), atol=1e-10):
        raise ValueError("rotation must be orthogonal")
    if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-10):
        raise ValueError("rotation must have determinant +1")
    return r


def rotation_about_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def geodesic_step(v: np.ndarray, direction: np.ndarray, t) -> np.ndarray:
    """exp_v(t * direction) for unit v and unit tangent direction."""
    t = np.asarray(t, dtype=float)[..., None]
    return np.cos(t) * v + np.sin(t) * direction
