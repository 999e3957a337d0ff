"""Small rigid-body helpers: axis-angle rotations, SO(3) log, poses."""
from dataclasses import dataclass

import numpy as np


def skew(w):
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def axis_angle(axis, angle):
    """Rodrigues rotation about a unit ``axis`` by ``angle`` radians."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = skew(k)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rot_x(angle):
    return axis_angle((1.0, 0.0, 0.0), angle)


def rot_y(angle):
    return axis_angle((0.0, 1.0, 0.0), angle)


def rot_z(angle):
    return axis_angle((0.0, 0.0, 1.0), angle)


def so3_log(R):
    """Rotation vector of ``R`` (axis * angle, angle in [0, pi])."""
    R = np.asarray(R, dtype=float)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-7:
        # first-order: R ~ I + [w]x
        return 0.5 * v
    if np.pi - angle < 1e-6:
        # near pi the antisymmetric part vanishes; use the symmetric part
        B = (R + np.eye(3)) / 2.0
        k = np.sqrt(np.clip(np.diag(B), 0.0, None))
        i = int(np.argmax(k))
        k[:] = B[i] / k[i]
        return angle * k / np.linalg.norm(k)
    return angle / (2.0 * np.sin(angle)) * v


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    return (R.shape == (3, 3)
            and np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) < tol)


def rotation_between(u, v):
    """Minimal rotation taking direction ``u`` onto direction ``v``."""
    u = np.asarray(u, float) / np.linalg.norm(u)
    v = np.asarray(v, float) / np.linalg.norm(v)
    axis = np.cross(u, v)
    s = np.linalg.norm(axis)
    c = float(np.dot(u, v))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: any perpendicular axis
        perp = np.cross(u, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(u, [0.0, 1.0, 0.0])
        return axis_angle(perp, np.pi)
    return axis_angle(axis / s, np.arctan2(s, c))


@dataclass(frozen=True)
class Pose:
    """Rigid transform; ``position`` in mm, ``orientation`` a proper rotation."""

    position: np.ndarray
    orientation: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.eye(3))

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.orientation
        T[:3, 3] = self.position
        return T

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(T[:3, 3].copy(), T[:3, :3].copy())

    def apply(self, points):
        """Map points from this frame into the parent frame."""
        return np.asarray(points, float) @ self.orientation.T + self.position

    def inverse_apply(self, points):
        """Map parent-frame points into this frame."""
        return (np.asarray(points, float) - self.position) @ self.orientation

    def compose(self, other):
        return Pose(self.apply(other.position), self.orientation @ other.orientation)

    def inverse(self):
        Rt = self.orientation.T
        return Pose(-Rt @ self.position, Rt)
