"""Quaternion algebra, frame rotations and RK4 integration.

Conventions: Hamilton product, scalar-first ``(w, x, y, z)``, and ``q``
rotates body-frame vectors into the world frame (``q_WB``). All functions
accept either single vectors or stacked arrays with the components on the
last axis, so the estimator can push whole horizons through at once.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

GRAVITY_W = np.array([0.0, 0.0, -9.81])
IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

UNIT_TOL = 1e-6


class NumericalFailure(RuntimeError):
    """Raised when a computation produces non-finite values."""


def quat_mul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0) or not np.all(np.isfinite(n)):
        raise NumericalFailure("cannot normalize a zero or non-finite quaternion")
    return q / n


def _cross(a, b):
    # np.cross carries noticeable overhead on the small batches used here
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def rotate(q, v) -> np.ndarray:
    """Sandwich product ``q v q̄`` without a unit-norm check.

    Used inside the vehicle models, where RK4 stages see slightly non-unit
    quaternions. Expands to ``|q|^2`` scaling for non-unit ``q``, exactly as
    the quaternion product does.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    uu = np.sum(u * u, axis=-1, keepdims=True)
    uv = np.sum(u * v, axis=-1, keepdims=True)
    return (w * w - uu) * v + 2.0 * uv * u + 2.0 * w * _cross(u, v)


def quat_rotate(q, v) -> np.ndarray:
    """Rotate ``v`` by the unit quaternion ``q`` (``q ⊙ v``)."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1)
    if np.any(np.abs(n - 1.0) > UNIT_TOL):
        raise ValueError(f"quaternion is not unit norm (|q| = {n})")
    return rotate(q, v)


def quat_rotate_inv(q, v) -> np.ndarray:
    """Rotate ``v`` by the inverse of the unit quaternion ``q``."""
    return quat_rotate(quat_conj(q), v)


def rotation_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion (body to world)."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    r = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return r.reshape(r.shape[:-1] + (3, 3))


def quat_from_axis_angle(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_deriv(q, omega) -> np.ndarray:
    """Attitude kinematics ``q̇ = q ⊙ (0, ω/2)`` with ``ω`` in the body frame."""
    omega = np.asarray(omega, dtype=float)
    pure = np.concatenate([np.zeros(omega.shape[:-1] + (1,)), 0.5 * omega], axis=-1)
    return quat_mul(q, pure)


def rk4_step(f: Callable, x, u, dt: float) -> np.ndarray:
    """One classical Runge-Kutta 4 step of ``ẋ = f(x, u)``.

    Quaternion blocks are integrated as plain coordinates; callers that
    carry a quaternion renormalize afterwards.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite value in RK4 step")
    return out


def attitude_error_deg(q_est, q_true) -> np.ndarray:
    """Geodesic angle between two attitudes in degrees, in ``[0, 180]``."""
    q_est = np.asarray(q_est, dtype=float)
    q_true = np.asarray(q_true, dtype=float)
    dot = np.abs(np.sum(q_est * q_true, axis=-1))
    return np.degrees(2.0 * np.arccos(np.clip(dot, -1.0, 1.0)))


def quat_from_matrix(r) -> np.ndarray:
    """Unit quaternion (``w >= 0``) of a single 3x3 rotation matrix."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s,
             (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s,
             (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s,
             (r[1, 2] + r[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
             (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q = q / np.linalg.norm(q)
    return -q if q[0] < 0 else q
