"""Quaternions, camera frames, and small vector helpers.

Conventions: world up is +z. A camera's local frame has columns
[right, down, forward]; pixels grow right/down from the top-left corner,
so the principal point sits at (width/2, height/2).
"""

import numpy as np


def normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero vector")
    return v / n


# --- quaternions, stored as (w, x, y, z) ---------------------------------

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if abs(n - 1.0) < 1e-12:  # keep already-unit values bit-stable
        return q
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector v by unit quaternion q."""
    w, x, y, z = q
    u = np.array([x, y, z])
    v = np.asarray(v, dtype=float)
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def quat_from_axis_angle(axis, angle_rad) -> np.ndarray:
    axis = normalize(np.asarray(axis, dtype=float))
    half = 0.5 * angle_rad
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_angle_between(q1, q2) -> float:
    """Rotation angle in radians taking q1 to q2 (always in [0, pi])."""
    dot = abs(float(np.dot(q1, q2)))
    return 2.0 * np.arccos(min(1.0, dot))


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; m columns are the rotated basis vectors."""
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    return quat_normalize([w, x, y, z])


def matrix_from_quat(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def look_at_quat(eye, target, world_up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera orientation with forward toward target, right level with world."""
    eye = np.asarray(eye, dtype=float)
    target = np.asarray(target, dtype=float)
    forward = normalize(target - eye)
    up = np.asarray(world_up, dtype=float)
    if abs(np.dot(forward, up)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = normalize(np.cross(forward, up))
    down = np.cross(forward, right)
    m = np.column_stack([right, down, forward])
    return quat_from_matrix(m)


def camera_axes(q):
    """(right, down, forward) unit vectors of a camera with orientation q."""
    m = matrix_from_quat(q)
    return m[:, 0], m[:, 1], m[:, 2]


def roll_mode(q) -> str:
    """Portrait/landscape classification; pure function of orientation."""
    right, down, _ = camera_axes(q)
    up_world = np.array([0.0, 0.0, 1.0])
    return "portrait" if abs(np.dot(right, up_world)) > abs(np.dot(down, up_world)) else "landscape"
