"""Rotation and quaternion algebra.

Quaternions are Hamilton, scalar first: ``[w, x, y, z]``. ``quat_to_rotation(q)``
maps body-frame vectors into the frame ``q`` is expressed in. Attitude errors
are right (local) perturbations, ``q <- q (x) [1, dtheta/2]``, renormalized.
"""
from __future__ import annotations

import math

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])

_UNIT_TOL = 1e-6


def _vec3(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return v


def _quat(q) -> np.ndarray:
    if type(q) is not np.ndarray or q.dtype != np.float64:
        q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise ValueError(f"expected a quaternion of shape (4,), got {q.shape}")
    return q


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ u == cross(v, u)``."""
    x, y, z = _vec3(v)
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def omega_matrix(w) -> np.ndarray:
    """4x4 rate matrix acting on ``[x, y, z, w]``-ordered quaternions.

    The block layout is ``[[-skew(w), w], [-w^T, 0]]``. Because storage here is
    scalar first, use :func:`omega_matrix_scalar_first` to act on our arrays.
    """
    w = _vec3(w)
    out = np.zeros((4, 4))
    out[:3, :3] = -skew(w)
    out[:3, 3] = w
    out[3, :3] = -w
    return out


def omega_matrix_scalar_first(w) -> np.ndarray:
    """The same operator permuted to scalar-first storage, so that
    ``0.5 * omega_matrix_scalar_first(w) @ q == 0.5 * q (x) [0, w]``."""
    perm = [3, 0, 1, 2]
    return omega_matrix(w)[np.ix_(perm, perm)]


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = _quat(a).tolist()
    bw, bx, by, bz = _quat(b).tolist()
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_left(q) -> np.ndarray:
    """Matrix ``L(q)`` with ``q (x) p == L(q) @ p``."""
    w, x, y, z = _quat(q)
    return np.array([[w, -x, -y, -z],
                     [x, w, -z, y],
                     [y, z, w, -x],
                     [z, -y, x, w]])


def quat_right(p) -> np.ndarray:
    """Matrix ``R(p)`` with ``q (x) p == R(p) @ q``."""
    w, x, y, z = _quat(p)
    return np.array([[w, -x, -y, -z],
                     [x, w, z, -y],
                     [y, -z, w, x],
                     [z, y, -x, w]])


def quat_conjugate(q) -> np.ndarray:
    q = _quat(q)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q) -> np.ndarray:
    q = _quat(q)
    n = math.sqrt(float(q @ q))
    if n == 0.0:
        raise ValueError("cannot normalize a zero quaternion")
    q = q / n
    # canonical hemisphere keeps logs short and comparisons stable
    return -q if q[0] < 0.0 else q


def quat_to_rotation(q) -> np.ndarray:
    w, x, y, z = _quat(q).tolist()
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if abs(n - 1.0) > _UNIT_TOL:
        raise ValueError(f"quaternion is not unit norm (|q| = {n:.9g}); normalize first")
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotation_to_quat(r: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns the w >= 0 representative."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    return quat_normalize(np.array(q))


def small_angle_quat(dtheta) -> np.ndarray:
    """First-order rotation ``[1, dtheta/2]``, normalized."""
    d = _vec3(dtheta)
    return quat_normalize(np.concatenate(([1.0], 0.5 * d)))


def quat_boxplus(q, dtheta) -> np.ndarray:
    return quat_normalize(quat_multiply(q, small_angle_quat(dtheta)))


def quat_boxminus(q1, q0) -> np.ndarray:
    """Inverse of :func:`quat_boxplus`: returns ``d`` with ``boxplus(q0, d) == q1``."""
    e = quat_multiply(quat_conjugate(q0), q1)
    if e[0] < 0.0:
        e = -e
    return 2.0 * e[1:] / e[0]


def quat_exp(phi) -> np.ndarray:
    phi = _vec3(phi)
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        return quat_normalize(np.concatenate(([1.0], 0.5 * phi)))
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * phi / angle))


def quat_log(q) -> np.ndarray:
    """Rotation vector of a unit quaternion (shortest arc)."""
    q = _quat(q)
    if q[0] < 0.0:
        q = -q
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v / q[0]
    return 2.0 * np.arctan2(s, q[0]) * v / s


def exp_so3(phi) -> np.ndarray:
    return quat_to_rotation(quat_exp(phi))


def right_jacobian_so3(phi) -> np.ndarray:
    """``Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)``."""
    phi = _vec3(phi)
    angle = np.linalg.norm(phi)
    k = skew(phi)
    if angle < 1e-8:
        return np.eye(3) - 0.5 * k
    a2 = angle * angle
    return (np.eye(3)
            - (1.0 - np.cos(angle)) / a2 * k
            + (angle - np.sin(angle)) / (a2 * angle) * (k @ k))


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
