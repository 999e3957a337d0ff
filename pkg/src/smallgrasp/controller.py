"""In-hand reorientation controller.

Each step turns one tactile cloud of the controlled (right) finger into joint
position targets for both fingers:

    contact estimate -> alignment error (theta_ab, v_rot)
    -> desired fingertip velocity (y, w_x, w_z)
    -> damped pseudoinverse + null-space joint centring
    -> q + q_dot * dt, clamped, mirrored to the left finger.

``damping`` is the pseudoinverse regulariser and ``deformed_radius`` is the
radial depth of the contact estimate; the two never share a name.
"""
import json
from dataclasses import asdict, dataclass, fields, replace
from typing import NamedTuple

import numpy as np

from .errors import DegenerateGeometry, LostContact
from .kinematics import (clamp_to_limits, damped_pseudoinverse, forward_kinematics,
                         jacobian_full, mirror, reduced_jacobian)
from .perception import DbscanParams, perceive, truncate_for_control

CONTACT_HYSTERESIS = 1.0  # mm below the detection threshold


@dataclass(frozen=True)
class ControllerParams:
    damping: float = 0.05
    penalty_gain: float = 0.5
    kp: tuple = (0.3, 0.5, 0.5)        # diagonal of K_p for (y, w_x, w_z)
    dt: float = 0.1                    # s
    contact_offset: float = 10.0       # mm, C_y
    convergence_angle: float = 0.05    # rad
    convergence_window: int = 5
    max_iterations: int = 300
    centroid_fraction: float = 0.30
    normalize_rotation_axis: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kp", tuple(float(k) for k in np.diag(self.kp_matrix)))
        if self.damping < 0:
            raise ValueError("damping must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if min(self.kp) <= 0:
            raise ValueError("kp entries must be > 0")
        if self.contact_offset <= 0:
            raise ValueError("contact_offset must be > 0")
        if self.convergence_window < 1 or self.max_iterations < 1:
            raise ValueError("convergence_window and max_iterations must be >= 1")

    @property
    def kp_matrix(self):
        kp = np.asarray(self.kp, dtype=float)
        if kp.shape == (3, 3):
            if np.any(kp != np.diag(np.diag(kp))):
                raise ValueError("kp must be diagonal")
            return kp
        if kp.shape != (3,):
            raise ValueError("kp must be 3 diagonal entries or a 3x3 diagonal matrix")
        return np.diag(kp)

    def check_against(self, model):
        if not self.contact_offset < model.fingertip_radius:
            raise ValueError("contact_offset must lie below the fingertip radius")

    def to_dict(self):
        d = asdict(self)
        d["kp"] = list(self.kp)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown controller parameters: {sorted(unknown)}")
        return cls(**d)


def load_controller_params(path):
    with open(path) as fh:
        return ControllerParams.from_dict(json.load(fh))


def save_controller_params(params, path):
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


class AlignmentError(NamedTuple):
    theta_ab: float
    v_rot: np.ndarray
    a: np.ndarray
    b: np.ndarray


def alignment_error(p_ft_L, p_ft_R, p_obj_R, normalize=False):
    a = np.asarray(p_ft_L, float) - np.asarray(p_ft_R, float)
    b = np.asarray(p_obj_R, float) - np.asarray(p_ft_R, float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-6 or nb < 1e-6:
        raise DegenerateGeometry("fingertip-to-fingertip or fingertip-to-object vector vanished")
    cos = np.clip(a @ b / (na * nb), -1.0, 1.0)
    theta = float(np.arccos(cos))
    v_rot = np.cross(b, a) / (na * nb)
    if normalize:
        s = np.linalg.norm(v_rot)
        v_rot = v_rot / s if s > 1e-12 else np.zeros(3)
    return AlignmentError(theta, v_rot, a, b)


def desired_velocity(err, deformed_radius, params):
    """(y_dot, w_x, w_z) = K_p / dt * (C_y - lambda_def, v_rot_x * theta, v_rot_z * theta)."""
    e = np.array([params.contact_offset - deformed_radius,
                  err.v_rot[0] * err.theta_ab,
                  err.v_rot[2] * err.theta_ab])
    return params.kp_matrix @ e / params.dt


def joint_rate(J, v_des, q, model, params):
    J_pinv = damped_pseudoinverse(J, params.damping)
    f_pen = -params.penalty_gain * (np.asarray(q, float) - model.q_mid)
    return J_pinv @ v_des + (np.eye(J.shape[1]) - J_pinv @ J) @ f_pen


@dataclass
class ControlCommand:
    q_dot: np.ndarray
    q_next_right: np.ndarray
    q_next_left: np.ndarray
    converged: bool
    theta_ab: float
    deformed_radius: float
    v_des: np.ndarray
    streak: int
    held: bool = False   # no cluster this frame; previous targets kept


def maintenance_params(dbscan_params):
    """Perception settings once in control: the threshold drops by the hysteresis band."""
    return replace(dbscan_params, deform_threshold=dbscan_params.deform_threshold - CONTACT_HYSTERESIS)


def control_step(q_right, cloud_right, model, params, dbscan_params=DbscanParams(),
                 rng=None, streak=0):
    """One quasi-static control iteration from a right-finger tactile cloud.

    ``streak`` counts consecutive prior steps below the convergence angle;
    the returned command carries the updated count.
    """
    q_right = np.asarray(q_right, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    cloud = truncate_for_control(cloud_right) if len(cloud_right) > 5000 else cloud_right
    result = perceive(cloud, maintenance_params(dbscan_params), rng, params.centroid_fraction)
    if result.n_deformed == 0:
        raise LostContact(f"max deformation {result.max_deformation:.2f} mm, contact lost")
    q_left = mirror(model, q_right)
    if result.contact is None:
        # only scattered deformed points: hold position until a patch reappears
        return ControlCommand(np.zeros(4), q_right.copy(), q_left, False, float("nan"),
                              float("nan"), np.zeros(3), 0, held=True)
    ft_R = forward_kinematics(model, q_right, "right")
    ft_L = forward_kinematics(model, q_left, "left")
    p_obj = ft_R.apply(result.contact.position)
    err = alignment_error(ft_L.position, ft_R.position, p_obj, params.normalize_rotation_axis)
    v_des = desired_velocity(err, result.contact.deformed_radius, params)
    q_dot = joint_rate(reduced_jacobian(jacobian_full(model, q_right)), v_des, q_right, model, params)
    q_next = clamp_to_limits(model, q_right + q_dot * params.dt)
    streak = streak + 1 if err.theta_ab < params.convergence_angle else 0
    return ControlCommand(q_dot, q_next, mirror(model, q_next),
                          streak >= params.convergence_window, err.theta_ab,
                          result.contact.deformed_radius, v_des, streak)


def trace_record(t, cmd):
    """One line of the per-step control trace."""
    def num(x):
        return None if x is None or not np.isfinite(x) else round(float(x), 9)
    return {
        "t": num(t),
        "q_right": [num(v) for v in cmd.q_next_right],
        "q_left": [num(v) for v in cmd.q_next_left],
        "theta_ab": num(cmd.theta_ab),
        "lambda_def": num(cmd.deformed_radius),
        "v_des": [num(v) for v in cmd.v_des],
        "converged": bool(cmd.converged),
    }


def write_trace(records, path):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trace(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
