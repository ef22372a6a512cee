import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualpronet_vio.geometry import (
    IDENTITY_QUAT,
    omega_matrix,
    omega_matrix_scalar_first,
    quat_boxminus,
    quat_boxplus,
    quat_conjugate,
    quat_multiply,
    quat_normalize,
    quat_to_rotation,
    rotation_to_quat,
    skew,
)

from conftest import unit_quats, vec3


def cross_by_components(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def rotation_from_axis_angle(axis, angle):
    """Rodrigues' formula, independent of the quaternion code."""
    k = np.asarray(axis, float) / np.linalg.norm(axis)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * kx @ kx


def test_skew_zero():
    assert np.array_equal(skew([0, 0, 0]), np.zeros((3, 3)))


def test_skew_unit_x_layout():
    assert np.array_equal(skew([1, 0, 0]), [[0, 0, 0], [0, 0, -1], [0, 1, 0]])


@given(vec3(), vec3())
def test_skew_matches_componentwise_cross(v, u):
    np.testing.assert_allclose(skew(v) @ u, cross_by_components(v, u), atol=1e-15 * (1 + np.abs(v).max() * np.abs(u).max()))


@given(vec3())
def test_skew_antisymmetric(v):
    s = skew(v)
    assert np.array_equal(s.T, -s)


def test_skew_rejects_wrong_shape():
    with pytest.raises(ValueError):
        skew([1.0, 2.0])


def test_omega_zero():
    assert np.array_equal(omega_matrix([0, 0, 0]), np.zeros((4, 4)))


def test_omega_block_layout_unit_z():
    om = omega_matrix([0, 0, 1])
    np.testing.assert_array_equal(om[:3, :3], -skew([0, 0, 1]))
    np.testing.assert_array_equal(om[:3, 3], [0, 0, 1])
    np.testing.assert_array_equal(om[3], [0, 0, -1, 0])


@given(vec3(5.0), unit_quats())
def test_omega_matches_quaternion_derivative(w, q):
    qdot = 0.5 * omega_matrix_scalar_first(w) @ q
    expected = 0.5 * quat_multiply(q, np.concatenate(([0.0], w)))
    np.testing.assert_allclose(qdot, expected, atol=1e-14 * (1 + np.abs(w).max()))


def test_omega_on_identity():
    w = np.array([0.3, -0.2, 0.9])
    np.testing.assert_allclose(0.5 * omega_matrix_scalar_first(w) @ IDENTITY_QUAT,
                               0.5 * np.concatenate(([0.0], w)), atol=1e-14)


@given(unit_quats())
def test_identity_and_inverse(q):
    np.testing.assert_allclose(quat_multiply(IDENTITY_QUAT, q), q, atol=1e-15)
    np.testing.assert_allclose(quat_multiply(q, quat_conjugate(q)), IDENTITY_QUAT, atol=1e-15)


@given(unit_quats(), unit_quats())
def test_multiply_composes_rotations(a, b):
    np.testing.assert_allclose(quat_to_rotation(quat_multiply(a, b)), quat_to_rotation(a) @ quat_to_rotation(b),
                               atol=1e-12)


def test_rotation_identity():
    np.testing.assert_array_equal(quat_to_rotation(IDENTITY_QUAT), np.eye(3))


def test_rotation_90_about_z():
    q = np.array([np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)])
    np.testing.assert_allclose(quat_to_rotation(q), [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


@pytest.mark.parametrize("axis, angle", [([1, 0, 0], 0.3), ([0, 1, 0], -1.2), ([1, 2, 3], 2.5), ([0, 0, 1], np.pi)])
def test_rotation_matches_rodrigues(axis, angle):
    k = np.asarray(axis, float) / np.linalg.norm(axis)
    q = np.concatenate(([np.cos(angle / 2)], np.sin(angle / 2) * k))
    np.testing.assert_allclose(quat_to_rotation(q), rotation_from_axis_angle(axis, angle), atol=1e-14)


@given(unit_quats())
def test_rotation_is_proper(q):
    r = quat_to_rotation(q)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(r) - 1.0) < 1e-12


@given(unit_quats(), vec3(100.0))
def test_rotation_preserves_norm(q, v):
    assert abs(np.linalg.norm(quat_to_rotation(q) @ v) - np.linalg.norm(v)) <= 1e-12 * max(1.0, np.linalg.norm(v))


def test_rotation_rejects_non_unit():
    with pytest.raises(ValueError, match="unit"):
        quat_to_rotation([1.0, 0.01, 0.0, 0.0])


@given(st.tuples(*[st.floats(-5, 5, allow_nan=False)] * 4).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_normalize_gives_unit_norm(v):
    assert abs(np.linalg.norm(quat_normalize(np.array(v))) - 1.0) < 1e-12


@given(unit_quats())
def test_rotation_to_quat_round_trip(q):
    back = rotation_to_quat(quat_to_rotation(q))
    # q and -q are the same rotation
    assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-12


@given(unit_quats(), vec3(0.1 / np.sqrt(3)))
def test_boxplus_boxminus_round_trip(q, d):
    q = quat_normalize(q)
    q1 = quat_boxplus(q, d)
    np.testing.assert_allclose(quat_boxminus(q1, q), d, atol=1e-10)
    back = quat_boxplus(q1, -quat_boxminus(q1, q))
    assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-10
