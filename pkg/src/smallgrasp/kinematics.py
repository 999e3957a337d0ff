"""Kinematics of the two-finger, 8-DOF gripper.

Gripper frame convention: +x runs along the straight fingers (approach
direction), +y is the closing axis and +z completes a right-handed frame.
The controlled ("right") finger is mounted at +y, the left finger is its
mirror image across the x-z plane. Every finger is a serial chain

    base -> R(axis1, q1) -> link p12 -> R(axis2, q2) -> link p23
         -> R(axis3, q3) -> link p34 -> R(axis4, q4) -> link p4ft -> tip

with links laid along ``link_direction`` of the preceding joint frame. The
fingertip frame sits at the hemisphere centre with its local +z (the pole)
facing the opposing finger.
"""
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import FormatError, RankDeficient
from .geometry import Pose, axis_angle, rot_x, so3_log

MODEL_VERSION = 1
SIDES = ("right", "left")
RANK_TOL = 1e-12

_X = np.array([1.0, 0.0, 0.0])
_Z = np.array([0.0, 0.0, 1.0])


def _default_axes():
    return {"right": np.array([_X, _Z, _Z, _X]),
            "left": np.array([-_X, _Z, _Z, -_X])}


def _default_bases(separation=80.0):
    half = separation / 2.0
    return {"right": Pose(np.array([0.0, half, 0.0]), np.eye(3)),
            "left": Pose(np.array([0.0, -half, 0.0]), np.eye(3))}


@dataclass(frozen=True)
class GripperModel:
    link_lengths: np.ndarray = field(
        default_factory=lambda: np.array([24.0, 95.52, 24.0, 55.0]))
    fingertip_radius: float = 15.5
    # rows (lo, hi) in rad; x-joints -45..90 deg, z-joints +-90 deg
    joint_limits: np.ndarray = field(default_factory=lambda: np.radians(
        [[-45.0, 90.0], [-90.0, 90.0], [-90.0, 90.0], [-45.0, 90.0]]))
    joint_axes: dict = field(default_factory=_default_axes)
    finger_base_poses: dict = field(default_factory=_default_bases)
    tip_rotations: dict = field(default_factory=lambda: {
        "right": rot_x(np.pi / 2), "left": rot_x(-np.pi / 2)})
    link_direction: np.ndarray = field(default_factory=lambda: _X.copy())
    # left q = mirror_signs * right q
    mirror_signs: np.ndarray = field(
        default_factory=lambda: np.array([1.0, -1.0, -1.0, 1.0]))
    model_version: int = MODEL_VERSION

    def __post_init__(self):
        lengths = np.asarray(self.link_lengths, float)
        if lengths.shape != (4,) or np.any(lengths <= 0):
            raise ValueError("link_lengths must be 4 strictly positive values")
        if self.fingertip_radius <= 0:
            raise ValueError("fingertip_radius must be positive")
        limits = np.asarray(self.joint_limits, float)
        if limits.shape != (4, 2) or np.any(limits[:, 0] > limits[:, 1]):
            raise ValueError("joint_limits must be 4 nonempty intervals")
        if not np.all(np.isfinite(limits)):
            raise ValueError("joint_limits must be finite")

    @property
    def q_mid(self):
        return np.asarray(self.joint_limits, float).mean(axis=1)

    @property
    def half_widths(self):
        lim = np.asarray(self.joint_limits, float)
        return (lim[:, 1] - lim[:, 0]) / 2.0

    def to_dict(self):
        return {
            "model_version": self.model_version,
            "link_lengths_mm": [float(v) for v in self.link_lengths],
            "fingertip_radius_mm": float(self.fingertip_radius),
            "joint_limits_rad": np.asarray(self.joint_limits, float).tolist(),
            "link_direction": np.asarray(self.link_direction, float).tolist(),
            "mirror_signs": np.asarray(self.mirror_signs, float).tolist(),
            "fingers": {
                side: {
                    "joint_axes": np.asarray(self.joint_axes[side], float).tolist(),
                    "base_position_mm": self.finger_base_poses[side].position.tolist(),
                    "base_orientation": self.finger_base_poses[side].orientation.tolist(),
                    "tip_rotation": np.asarray(self.tip_rotations[side]).tolist(),
                } for side in SIDES
            },
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("model_version") != MODEL_VERSION:
            raise FormatError(f"unsupported gripper model_version {d.get('model_version')!r}")
        fingers = d["fingers"]
        return cls(
            link_lengths=np.array(d["link_lengths_mm"], float),
            fingertip_radius=float(d["fingertip_radius_mm"]),
            joint_limits=np.array(d["joint_limits_rad"], float),
            joint_axes={s: np.array(fingers[s]["joint_axes"], float) for s in SIDES},
            finger_base_poses={s: Pose(np.array(fingers[s]["base_position_mm"], float),
                                       np.array(fingers[s]["base_orientation"], float))
                               for s in SIDES},
            tip_rotations={s: np.array(fingers[s]["tip_rotation"], float) for s in SIDES},
            link_direction=np.array(d["link_direction"], float),
            mirror_signs=np.array(d["mirror_signs"], float),
        )


def load_gripper_model(path):
    with open(path) as fh:
        return GripperModel.from_dict(json.load(fh))


def save_gripper_model(model, path):
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def mirror(model, q):
    """Map right-finger joints to the left finger (an involution)."""
    return np.asarray(model.mirror_signs, float) * np.asarray(q, float)


def _chain(model, q, side):
    """Joint origins/axes in the gripper frame plus the tip pose."""
    q = np.asarray(q, dtype=float)
    base = model.finger_base_poses[side]
    axes = np.asarray(model.joint_axes[side], float)
    link = np.asarray(model.link_direction, float)
    R = base.orientation.copy()
    p = base.position.copy()
    origins, world_axes = [], []
    for i in range(4):
        origins.append(p.copy())
        world_axes.append(R @ axes[i])
        R = R @ axis_angle(axes[i], q[i])
        p = p + R @ (model.link_lengths[i] * link)
    return np.array(origins), np.array(world_axes), Pose(p, R @ model.tip_rotations[side])


def forward_kinematics(model, q, side="right"):
    """Fingertip-origin pose (hemisphere centre) in the gripper frame."""
    return _chain(model, q, side)[2]


def jacobian_full(model, q, side="right"):
    """Geometric 6x4 Jacobian: rows 0-2 linear (mm/rad), rows 3-5 angular."""
    origins, axes, tip = _chain(model, q, side)
    J = np.empty((6, 4))
    for i in range(4):
        J[:3, i] = np.cross(axes[i], tip.position - origins[i])
        J[3:, i] = axes[i]
    return J


def reduced_jacobian(J_all):
    """Rows (y, omega_x, omega_z) of a 6x4 Jacobian."""
    J_all = np.asarray(J_all)
    return J_all[[1, 3, 5], :]


def damped_pseudoinverse(J, damping):
    """(J^T J + damping^2 I)^-1 J^T.

    Evaluated through the push-through identity J^T (J J^T + damping^2 I)^-1,
    which is algebraically identical for damping > 0 and is the Moore-Penrose
    inverse at damping = 0 when J has full row rank.
    """
    if damping < 0:
        raise ValueError("damping must be >= 0")
    J = np.asarray(J, dtype=float)
    G = J @ J.T
    if damping == 0:
        ev = np.linalg.eigvalsh(G)
        if ev[-1] <= 0 or ev[0] <= RANK_TOL * ev[-1]:
            raise RankDeficient("J J^T is singular; use damping > 0")
    else:
        G = G + damping ** 2 * np.eye(G.shape[0])
    return np.linalg.solve(G, J).T


class LimitCheck(NamedTuple):
    ok: bool
    margins: np.ndarray
    offending: tuple


def within_limits(model, q):
    """Closed-interval joint-limit test with signed margins to the nearest bound."""
    q = np.asarray(q, dtype=float)
    lim = np.asarray(model.joint_limits, float)
    margins = np.minimum(q - lim[:, 0], lim[:, 1] - q)
    offending = tuple(int(i) for i in np.flatnonzero(margins < 0))
    return LimitCheck(not offending, margins, offending)


def clamp_to_limits(model, q):
    lim = np.asarray(model.joint_limits, float)
    return np.clip(np.asarray(q, float), lim[:, 0], lim[:, 1])


class FingertipState(NamedTuple):
    y: float
    theta_x: float
    theta_z: float


def fingertip_state(model, q, side="right"):
    """Controller state (y, theta_x, theta_z).

    The angles are components of the rotation vector taking the home (q = 0)
    fingertip orientation to the current one, expressed in the gripper frame;
    to first order they integrate the omega_x / omega_z rows of the Jacobian.
    """
    tip = forward_kinematics(model, q, side)
    home = forward_kinematics(model, np.zeros(4), side)
    w = so3_log(tip.orientation @ home.orientation.T)
    return FingertipState(float(tip.position[1]), float(w[0]), float(w[2]))
