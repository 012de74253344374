"""Quaternion utilities for trunk orientation, vectorized over batch axes.

Quaternions are stored (w, x, y, z), unit norm, mapping body frame to world:
v_world = R(q) @ v_body.
"""

import numpy as np


def quat_identity(batch_shape=()):
    q = np.zeros(tuple(batch_shape) + (4,))
    q[..., 0] = 1.0
    return q


def quat_normalize(q):
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_multiply(a, b):
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_rotate(q, v):
    """Rotate body-frame vectors into the world frame."""
    w = q[..., 0:1]
    u = q[..., 1:4]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def quat_rotate_inverse(q, v):
    """Rotate world-frame vectors into the body frame."""
    w = q[..., 0:1]
    u = -q[..., 1:4]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def quat_to_matrix(q):
    """Rotation matrices (..., 3, 3) with columns = body axes in world frame."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[..., 0, 1] = 2.0 * (x * y - w * z)
    out[..., 0, 2] = 2.0 * (x * z + w * y)
    out[..., 1, 0] = 2.0 * (x * y + w * z)
    out[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[..., 1, 2] = 2.0 * (y * z - w * x)
    out[..., 2, 0] = 2.0 * (x * z - w * y)
    out[..., 2, 1] = 2.0 * (y * z + w * x)
    out[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


def quat_from_yaw(yaw):
    yaw = np.asarray(yaw, dtype=float)
    half = 0.5 * yaw
    zeros = np.zeros_like(yaw)
    return np.stack([np.cos(half), zeros, zeros, np.sin(half)], axis=-1)


def quat_from_rotvec(rv):
    """Quaternion for a rotation vector (axis * angle)."""
    angle = np.linalg.norm(rv, axis=-1, keepdims=True)
    small = angle < 1e-12
    axis = np.where(small, 0.0, rv / np.where(small, 1.0, angle))
    half = 0.5 * angle
    q = np.concatenate([np.cos(half), axis * np.sin(half)], axis=-1)
    return np.where(small, np.concatenate([np.ones_like(half), rv * 0.5], axis=-1), q)


def quat_integrate(q, omega_body, dt):
    """Advance orientation by body angular velocity over dt, renormalized."""
    dq = quat_from_rotvec(omega_body * dt)
    return quat_normalize(quat_multiply(q, dq))


def gravity_in_body(q):
    """Unit gravity direction expressed in the body frame ((0,0,-1) at identity)."""
    g_world = np.zeros(q.shape[:-1] + (3,))
    g_world[..., 2] = -1.0
    return quat_rotate_inverse(q, g_world)


def roll_pitch(q):
    """Trunk roll and pitch angles derived from the projected gravity vector."""
    g = gravity_in_body(q)
    roll = np.arctan2(-g[..., 1], -g[..., 2])
    pitch = np.arctan2(g[..., 0], np.sqrt(g[..., 1] ** 2 + g[..., 2] ** 2))
    return roll, pitch


def yaw_from_quat(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
