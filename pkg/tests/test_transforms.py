import numpy as np
import pytest

import kincal as kc
from kincal.errors import InvalidParameterError
from kincal.transforms import RigidTransform, rot_x, rot_y, rot_z, rotation_angle


def test_identity():
    t = RigidTransform.identity()
    np.testing.assert_array_equal(t.rotation, np.eye(3))
    np.testing.assert_array_equal(t.translation, np.zeros(3))


def test_rotation_builders_against_explicit_matrices():
    a = 0.37
    c, s = np.cos(a), np.sin(a)
    np.testing.assert_allclose(rot_x(a), [[1, 0, 0], [0, c, -s], [0, s, c]],
                               atol=1e-15)
    np.testing.assert_allclose(rot_y(a), [[c, 0, s], [0, 1, 0], [-s, 0, c]],
                               atol=1e-15)
    np.testing.assert_allclose(rot_z(a), [[c, -s, 0], [s, c, 0], [0, 0, 1]],
                               atol=1e-15)


def test_invariants_enforced():
    with pytest.raises(InvalidParameterError):
        RigidTransform(np.eye(3) * 2.0, np.zeros(3))
    # reflection: orthonormal but det = -1
    with pytest.raises(InvalidParameterError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_compose_matches_matrix_product(rng):
    a = RigidTransform(rot_x(0.3) @ rot_z(-0.8), rng.uniform(-1, 1, 3))
    b = RigidTransform(rot_y(1.1), rng.uniform(-1, 1, 3))
    np.testing.assert_allclose((a @ b).matrix, a.matrix @ b.matrix, atol=1e-14)


def test_inverse(rng):
    t = RigidTransform(rot_z(0.9) @ rot_x(-0.4), rng.uniform(-1, 1, 3))
    np.testing.assert_allclose((t @ t.inverse()).matrix, np.eye(4), atol=1e-14)
    np.testing.assert_allclose(t.inverse().matrix, np.linalg.inv(t.matrix),
                               atol=1e-12)


def test_apply_points(rng):
    t = RigidTransform(rot_y(0.5), np.array([1.0, -2.0, 0.5]))
    pts = rng.uniform(-3, 3, (10, 3))
    expected = (t.rotation @ pts.T).T + t.translation
    np.testing.assert_allclose(t.apply(pts), expected, atol=1e-14)
    # single point keeps its shape
    one = t.apply(pts[0])
    assert one.shape == (3,)
    np.testing.assert_allclose(one, expected[0], atol=1e-14)


def test_rotation_angle():
    assert rotation_angle(np.eye(3)) == 0.0
    np.testing.assert_allclose(rotation_angle(rot_z(0.25)), 0.25, atol=1e-12)
    np.testing.assert_allclose(rotation_angle(rot_x(np.pi)), np.pi, atol=1e-9)


def test_from_matrix_roundtrip():
    t = RigidTransform(rot_x(0.2) @ rot_y(0.3), np.array([0.1, 0.2, 0.3]))
    np.testing.assert_allclose(RigidTransform.from_matrix(t.matrix).matrix,
                               t.matrix, atol=1e-15)
