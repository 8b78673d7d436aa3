import math

import numpy as np
import pytest

from sphepc.sphere import (
    SpherePoint,
    check_rotation,
    geodesic_distance,
    rotation_about_y,
    unit_vectors,
    angles_from_vectors,
)


def test_phi_wraps_into_range():
    p = SpherePoint(1.0, -0.5)
    assert 0.0 <= p.phi < 2.0 * math.pi
    assert p.phi == pytest.approx(2.0 * math.pi - 0.5)


def test_theta_out_of_range_rejected():
    with pytest.raises(ValueError):
        SpherePoint(3.5, 0.0)
    with pytest.raises(ValueError):
        SpherePoint(math.nan, 0.0)


def test_unit_vector_roundtrip():
    p = SpherePoint(0.7, 2.1)
    q = SpherePoint.from_unit_vector(p.unit_vector())
    assert q.theta == pytest.approx(p.theta, abs=1e-12)
    assert q.phi == pytest.approx(p.phi, abs=1e-12)


def test_geodesic_distance_antipodal_and_zero():
    n = SpherePoint(0.0, 0.0)
    s = SpherePoint(math.pi, 0.0)
    assert geodesic_distance(n, s) == pytest.approx(math.pi)
    assert geodesic_distance(n, n) == pytest.approx(0.0, abs=1e-15)


def test_rotation_validation():
    check_rotation(rotation_about_y(0.3))
    with pytest.raises(ValueError):
        check_rotation(np.diag([1.0, 1.0, -1.0]))  # reflection
    with pytest.raises(ValueError):
        check_rotation(2.0 * np.eye(3))


def test_angles_vectors_consistency():
    theta = np.array([0.3, 1.2, 2.9])
    phi = np.array([0.0, 3.0, 5.5])
    t2, p2 = angles_from_vectors(unit_vectors(theta, phi))
    np.testing.assert_allclose(t2, theta, atol=1e-12)
    np.testing.assert_allclose(p2, phi, atol=1e-12)
