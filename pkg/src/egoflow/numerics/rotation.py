"""Rotation matrices, quaternions, and the 6D rotation encoding.

Conventions: rotation matrices are 3x3 row-major numpy arrays acting on
column vectors; quaternions are [w, x, y, z] with unit norm; the 6D
encoding is the first two matrix columns concatenated column-major,
recovered with normalize-then-Gram-Schmidt.
"""

from __future__ import annotations

import numpy as np

from egoflow.errors import DegenerateFrame

# Tolerance below which an axis is considered collapsed.
EPS_DEGENERATE = 1e-8


def gram_schmidt_frame(x_raw: np.ndarray, y_raw: np.ndarray) -> np.ndarray:
    """Build a right-handed orthonormal frame from two raw axes.

    Column 0 is the normalized x axis, column 1 the component of y
    orthogonal to it, column 2 their cross product.
    """
    x_raw = np.asarray(x_raw, dtype=float)
    y_raw = np.asarray(y_raw, dtype=float)
    nx = np.linalg.norm(x_raw)
    if nx <= EPS_DEGENERATE:
        raise DegenerateFrame(f"x axis norm {nx:.3e} below {EPS_DEGENERATE:.0e}")
    x = x_raw / nx
    y_perp = y_raw - np.dot(y_raw, x) * x
    ny = np.linalg.norm(y_perp)
    if ny <= EPS_DEGENERATE:
        raise DegenerateFrame(f"y axis collapses onto x (residual {ny:.3e})")
    y = y_perp / ny
    z = np.cross(x, y)
    return np.column_stack([x, y, z])


def rot_to_6d(rot: np.ndarray) -> np.ndarray:
    """First two columns of a rotation matrix, column-major order."""
    rot = np.asarray(rot, dtype=float)
    return np.concatenate([rot[:, 0], rot[:, 1]])


def six_d_to_rot(r6: np.ndarray) -> np.ndarray:
    """Recover a valid rotation from a (possibly noisy) 6D encoding."""
    r6 = np.asarray(r6, dtype=float)
    if r6.shape != (6,):
        raise DegenerateFrame(f"expected 6 values, got shape {r6.shape}")
    return gram_schmidt_frame(r6[:3], r6[3:])


def rotation_angle(rot: np.ndarray) -> float:
    """Angle of a rotation matrix in radians, in [0, pi]."""
    tr = float(np.trace(rot))
    return float(np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0)))


def quat_from_rotmat(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion [w, x, y, z] for a rotation matrix (w >= 0)."""
    rot = np.asarray(rot, dtype=float)
    tr = rot[0, 0] + rot[1, 1] + rot[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [
                0.25 * s,
                (rot[2, 1] - rot[1, 2]) / s,
                (rot[0, 2] - rot[2, 0]) / s,
                (rot[1, 0] - rot[0, 1]) / s,
            ]
        )
    else:
        i = int(np.argmax([rot[0, 0], rot[1, 1], rot[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(rot[i, i] - rot[j, j] - rot[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (rot[k, j] - rot[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (rot[j, i] + rot[i, j]) / s
        q[1 + k] = (rot[k, i] + rot[i, k]) / s
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix for a unit quaternion [w, x, y, z]."""
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def slerp(q0: np.ndarray, q1: np.ndarray, alpha: float) -> np.ndarray:
    """Shortest-path spherical interpolation between unit quaternions.

    q1 is negated when the quaternions sit on opposite hemispheres so the
    path never exceeds 180 degrees. Near-identical inputs fall back to
    normalized linear interpolation to avoid dividing by sin(0).
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-9:
        out = (1.0 - alpha) * q0 + alpha * q1
        return out / np.linalg.norm(out)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    out = (np.sin((1.0 - alpha) * theta) / s) * q0 + (np.sin(alpha * theta) / s) * q1
    return out / np.linalg.norm(out)


def slerp_rotmat(r0: np.ndarray, r1: np.ndarray, alpha: float) -> np.ndarray:
    """SLERP expressed on rotation matrices."""
    return quat_to_rotmat(slerp(quat_from_rotmat(r0), quat_from_rotmat(r1), alpha))
