"""Rigid-body pose math: unit quaternions, SE(3) composition, twists.

Quaternions are stored as numpy arrays in (x, y, z, w) order. Rotation
composition follows the Hamilton convention, so R(a * b) = R(a) R(b).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Pose",
    "Twist",
    "IDENTITY_QUAT",
    "quat_normalize",
    "quat_multiply",
    "quat_conjugate",
    "quat_rotate",
    "quat_from_axis_angle",
    "quat_to_axis_angle",
    "quat_integrate",
    "quat_slerp",
    "geodesic_angle",
    "pose_identity",
    "pose_compose",
    "pose_inverse",
    "pose_transform_point",
    "look_at_quat",
]

IDENTITY_QUAT = np.array([0.0, 0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Pose:
    """Position plus unit orientation quaternion, both world-frame unless noted."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", np.asarray(self.orientation, dtype=float))


@dataclass(frozen=True)
class Twist:
    """Linear and angular velocity, m/s and rad/s."""

    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float))
        object.__setattr__(self, "angular", np.asarray(self.angular, dtype=float))


def quat_normalize(q):
    """Return q scaled to unit norm. Raises on a zero or non-finite quaternion."""
    q = np.asarray(q, dtype=float)
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if not (n > 0.0 and math.isfinite(n)):
        raise ValueError("cannot normalize degenerate quaternion")
    return q / n


def quat_multiply(a, b):
    """Hamilton product a * b in (x, y, z, w) storage."""
    ax, ay, az, aw = a[0], a[1], a[2], a[3]
    bx, by, bz, bw = b[0], b[1], b[2], b[3]
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def quat_conjugate(q):
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_rotate(q, v):
    """Rotate vector v by unit quaternion q: v + 2w(u x v) + 2u x (u x v)."""
    ux, uy, uz, w = q[0], q[1], q[2], q[3]
    vx, vy, vz = v[0], v[1], v[2]
    # t = 2 * (u x v)
    tx = 2.0 * (uy * vz - uz * vy)
    ty = 2.0 * (uz * vx - ux * vz)
    tz = 2.0 * (ux * vy - uy * vx)
    return np.array(
        [
            vx + w * tx + uy * tz - uz * ty,
            vy + w * ty + uz * tx - ux * tz,
            vz + w * tz + ux * ty - uy * tx,
        ]
    )


def quat_from_axis_angle(axis, angle):
    """Unit quaternion for a rotation of `angle` radians about `axis`."""
    ax, ay, az = axis[0], axis[1], axis[2]
    n = math.sqrt(ax * ax + ay * ay + az * az)
    if n == 0.0:
        if angle == 0.0:
            return IDENTITY_QUAT.copy()
        raise ValueError("zero axis with nonzero angle")
    s = math.sin(0.5 * angle) / n
    return np.array([ax * s, ay * s, az * s, math.cos(0.5 * angle)])


def quat_to_axis_angle(q):
    """Inverse of quat_from_axis_angle; returns (axis, angle) with angle in [0, pi].

    The identity maps to (z-axis, 0).
    """
    x, y, z, w = q[0], q[1], q[2], q[3]
    if w < 0.0:  # pick the short representative
        x, y, z, w = -x, -y, -z, -w
    s = math.sqrt(x * x + y * y + z * z)
    if s < 1e-12:
        return np.array([0.0, 0.0, 1.0]), 0.0
    angle = 2.0 * math.atan2(s, w)
    return np.array([x / s, y / s, z / s]), angle


def quat_integrate(q, omega, dt):
    """First-order attitude step: q + 0.5 * q * (omega, 0) * dt, renormalized."""
    qx, qy, qz, qw = q[0], q[1], q[2], q[3]
    wx, wy, wz = omega[0], omega[1], omega[2]
    h = 0.5 * dt
    nx = qx + h * (qw * wx + qy * wz - qz * wy)
    ny = qy + h * (qw * wy - qx * wz + qz * wx)
    nz = qz + h * (qw * wz + qx * wy - qy * wx)
    nw = qw + h * (-qx * wx - qy * wy - qz * wz)
    n = math.sqrt(nx * nx + ny * ny + nz * nz + nw * nw)
    if not (n > 0.0 and math.isfinite(n)):
        raise ValueError("degenerate quaternion after integration step")
    return np.array([nx / n, ny / n, nz / n, nw / n])


def quat_slerp(qa, qb, t):
    """Spherical interpolation from qa (t=0) to qb (t=1) along the short arc."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    dot = float(qa @ qb)
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-10:
        return quat_normalize(qa + t * (qb - qa))
    theta = math.acos(min(1.0, dot))
    s = math.sin(theta)
    return (math.sin((1.0 - t) * theta) / s) * qa + (math.sin(t * theta) / s) * qb


def geodesic_angle(qa, qb):
    """Rotation angle in [0, pi] between two unit quaternions.

    Insensitive to the q / -q double cover.
    """
    d = abs(qa[0] * qb[0] + qa[1] * qb[1] + qa[2] * qb[2] + qa[3] * qb[3])
    return 2.0 * math.acos(min(1.0, d))


def pose_identity():
    return Pose(np.zeros(3), IDENTITY_QUAT.copy())


def pose_compose(a: Pose, b: Pose) -> Pose:
    """a then b: position a.p + R(a.q) b.p, orientation a.q * b.q."""
    return Pose(
        a.position + quat_rotate(a.orientation, b.position),
        quat_normalize(quat_multiply(a.orientation, b.orientation)),
    )


def pose_inverse(p: Pose) -> Pose:
    qc = quat_conjugate(p.orientation)
    return Pose(-quat_rotate(qc, p.position), qc)


def pose_transform_point(p: Pose, point):
    """Map a point from the frame of p into the parent frame."""
    return p.position + quat_rotate(p.orientation, point)


def look_at_quat(eye, target, up=(0.0, 0.0, 1.0)):
    """Orientation whose +z axis points from eye toward target.

    `up` disambiguates the roll; a fallback axis is used when the viewing
    direction is parallel to it.
    """
    eye = np.asarray(eye, dtype=float)
    target = np.asarray(target, dtype=float)
    fwd = target - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        return IDENTITY_QUAT.copy()
    fwd = fwd / n
    upv = np.asarray(up, dtype=float)
    right = np.cross(upv, fwd)
    rn = np.linalg.norm(right)
    if rn < 1e-8:
        right = np.cross(np.array([1.0, 0.0, 0.0]), fwd)
        rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(fwd, right)
    m = np.array([right, down, fwd]).T  # columns are the frame axes
    return _quat_from_matrix(m)


def _quat_from_matrix(m):
    """Shepperd's method, returns (x, y, z, w)."""
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        return quat_normalize(
            np.array(
                [
                    (m[2, 1] - m[1, 2]) / s,
                    (m[0, 2] - m[2, 0]) / s,
                    (m[1, 0] - m[0, 1]) / s,
                    0.25 * s,
                ]
            )
        )
    i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
    if i == 0:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = [0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s, (m[2, 1] - m[1, 2]) / s]
    elif i == 1:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = [(m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s, (m[0, 2] - m[2, 0]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = [(m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s, (m[1, 0] - m[0, 1]) / s]
    return quat_normalize(np.array(q))
