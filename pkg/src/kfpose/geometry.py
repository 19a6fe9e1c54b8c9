"""Rigid-transform algebra: unit quaternion + translation.

Conventions: quaternions are stored (w, x, y, z) with w >= 0 so every
rotation has one canonical representation; angles are radians everywhere
inside the engine (degrees appear only at CLI and file boundaries);
translations are meters.  Values are immutable and safe to share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_UNIT_TOL = 1e-9


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def _canonicalize(q: np.ndarray) -> np.ndarray:
    q = q / math.sqrt(float(np.dot(q, q)))
    # w == 0 exactly (180 degree rotations): pick the first nonzero component positive
    if q[0] < 0.0 or (q[0] == 0.0 and _first_nonzero_negative(q)):
        q = -q
    return q


def _first_nonzero_negative(q: np.ndarray) -> bool:
    for v in q[1:]:
        if v != 0.0:
            return v < 0.0
    return False


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix, canonical sign."""
    m = np.asarray(m, dtype=float)
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    if trace > 0.0:
        s = math.sqrt(trace + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return _canonicalize(q)


@dataclass(frozen=True)
class RigidTransform:
    """An SE(3) element: rotation (unit quaternion, w >= 0) and translation (meters)."""

    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        n = math.sqrt(float(np.dot(q, q)))
        if not math.isfinite(n) or abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} too far from 1")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        q = _canonicalize(q)
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", t)

    @property
    def matrix(self) -> np.ndarray:
        """Rotation part as a 3x3 matrix."""
        return quat_to_matrix(self.quaternion)

    def to_floats(self) -> np.ndarray:
        """Serialization order: w, x, y, z, tx, ty, tz."""
        return np.concatenate([self.quaternion, self.translation])

    @classmethod
    def from_floats(cls, values) -> "RigidTransform":
        v = np.asarray(values, dtype=float).reshape(7)
        return cls(v[:4], v[4:])

    def __repr__(self) -> str:  # pragma: no cover
        q = ", ".join(f"{v:.6g}" for v in self.quaternion)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"RigidTransform(q=[{q}], t=[{t}])"


IDENTITY = RigidTransform()


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Group product: (a o b) p = a (b p)."""
    q = _quat_mul(a.quaternion, b.quaternion)
    t = a.translation + quat_to_matrix(a.quaternion) @ b.translation
    return RigidTransform(q, t)


def inverse(t: RigidTransform) -> RigidTransform:
    q = t.quaternion * np.array([1.0, -1.0, -1.0, -1.0])
    r_inv = quat_to_matrix(q)
    return RigidTransform(q, -(r_inv @ t.translation))


def apply_point(t: RigidTransform, p) -> np.ndarray:
    """R p + t for a single 3-vector or an (N, 3) batch."""
    p = np.asarray(p, dtype=float)
    return p @ t.matrix.T + t.translation


def rotation_distance(a: RigidTransform, b: RigidTransform) -> float:
    """Geodesic angle between the rotation parts, in [0, pi]."""
    rel = _quat_mul(a.quaternion * np.array([1.0, -1.0, -1.0, -1.0]), b.quaternion)
    return 2.0 * math.atan2(math.sqrt(float(np.dot(rel[1:], rel[1:]))), abs(float(rel[0])))


def translation_distance(a: RigidTransform, b: RigidTransform) -> float:
    return float(np.linalg.norm(a.translation - b.translation))


def from_axis_angle(axis, angle: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
    """Rotation of `angle` radians about a unit `axis`, plus a translation."""
    axis = np.asarray(axis, dtype=float).reshape(3)
    n = float(np.linalg.norm(axis))
    if abs(angle) > 0.0 and abs(n - 1.0) > _UNIT_TOL:
        raise ValueError(f"axis norm {n} not within {_UNIT_TOL} of 1")
    if angle == 0.0:
        return RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), translation)
    half = 0.5 * angle
    q = np.concatenate([[math.cos(half)], math.sin(half) * axis])
    return RigidTransform(q, translation)


def rotation_about(q: np.ndarray, center) -> RigidTransform:
    """The transform rotating by quaternion `q` about the point `center`."""
    center = np.asarray(center, dtype=float).reshape(3)
    r = quat_to_matrix(np.asarray(q, dtype=float))
    return RigidTransform(q, center - r @ center)


def quats_to_matrices(quats: np.ndarray) -> np.ndarray:
    """(N, 4) quaternions -> (N, 3, 3) rotation matrices, vectorized."""
    q = np.asarray(quats, dtype=float)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3))
    m[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[:, 0, 1] = 2.0 * (x * y - w * z)
    m[:, 0, 2] = 2.0 * (x * z + w * y)
    m[:, 1, 0] = 2.0 * (x * y + w * z)
    m[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[:, 1, 2] = 2.0 * (y * z - w * x)
    m[:, 2, 0] = 2.0 * (x * z - w * y)
    m[:, 2, 1] = 2.0 * (y * z + w * x)
    m[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m
