"""Closed-loop in-hand control against the carry model."""
from dataclasses import dataclass, field

import numpy as np

from ..controller import control_step, maintenance_params, trace_record
from ..errors import DroppedObject, LostContact
from ..geometry import Pose
from ..kinematics import forward_kinematics, mirror
from ..perception import DbscanParams, perceive
from .shapes import SimObject
from .tactile import render_tactile
from .world import (GraspOutcome, apply_finger_motion, carry, close_gripper, closing_config,
                    place_in_hand)

CONTROL_RESOLUTION = 79  # largest grid whose cloud stays under the 5000-point control limit


@dataclass
class ControlRun:
    outcome: str                 # "converged", "timeout" or "lost_contact"
    steps: int
    q_right: np.ndarray
    thetas: list = field(default_factory=list)
    records: list = field(default_factory=list)

    @property
    def converged(self):
        return self.outcome == "converged"

    def monotone_fraction(self, tol=1e-9):
        """Share of steps where theta_ab did not increase."""
        th = np.array([t for t in self.thetas if np.isfinite(t)])
        if len(th) < 2:
            return 1.0
        return float(np.mean(np.diff(th) <= tol))


def run_control_loop(att, model, params, q0, rng, resolution=CONTROL_RESOLUTION,
                     dbscan_params=DbscanParams(), t0=0.0):
    """Iterate sense -> control_step -> move until convergence, timeout or lost contact."""
    q = np.asarray(q0, dtype=float)
    streak = 0
    run = ControlRun("timeout", 0, q)
    t = t0
    for k in range(params.max_iterations):
        ft = forward_kinematics(model, q)
        _, cloud = render_tactile(ft, att.objects, model.fingertip_radius, resolution,
                                  timestamp=t)
        try:
            cmd = control_step(q, cloud, model, params, dbscan_params, rng, streak)
        except LostContact:
            run.outcome = "lost_contact"
            break
        run.steps = k + 1
        run.thetas.append(cmd.theta_ab)
        run.records.append(trace_record(t, cmd))
        if cmd.converged:
            run.outcome = "converged"
            break
        try:
            apply_finger_motion(att, cmd.q_next_right, cmd.q_next_left, model)
        except DroppedObject:
            run.outcome = "lost_contact"
            break
        q = cmd.q_next_right
        streak = cmd.streak
        t += params.dt
    run.q_right = q
    return run


def sensed_radius(att, model, q_right, rng, resolution=CONTROL_RESOLUTION,
                  dbscan_params=DbscanParams(), centroid_fraction=0.30):
    """Deformed radius of the contact estimate seen at ``q_right`` (nan without a cluster)."""
    ft = forward_kinematics(model, q_right)
    _, cloud = render_tactile(ft, carry(att, ft), model.fingertip_radius, resolution)
    res = perceive(cloud, maintenance_params(dbscan_params), rng, centroid_fraction)
    return np.nan if res.contact is None else res.contact.deformed_radius


def squeeze_to_setpoint(att, model, q0, params, rng, resolution=CONTROL_RESOLUTION,
                        dbscan_params=DbscanParams(), iterations=12):
    """Tighten or relax the parallel grip until the sensed radius sits at ``contact_offset``.

    Bisection on the closing angle around the posture found by the closing
    motion; the carry model keeps the object between the fingertips while
    the grip changes.
    """
    alpha0 = -q0[1]
    lo, hi = alpha0 - 0.05, alpha0 + 0.05
    best = alpha0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        try:
            lam = sensed_radius(att, model, closing_config(mid), rng, resolution, dbscan_params,
                                params.centroid_fraction)
        except DroppedObject:
            lam = np.nan
        if not np.isfinite(lam) or lam > params.contact_offset:
            lo = mid    # too shallow: close further
        else:
            hi = mid
            best = mid
    q = closing_config(best)
    apply_finger_motion(att, q, mirror(model, q), model)
    return q


def hand_episode(shape, class_id, offset, model, rng, params=None, target_depth=6.0,
                 resolution=CONTROL_RESOLUTION):
    """An object already grasped at ``offset`` (dx, dz mm); returns (attachment, q0)."""
    obj = SimObject(shape, Pose.identity(), class_id)
    att = place_in_hand(GraspOutcome("one", [obj], [tuple(offset)]), model, rng)
    q0 = close_gripper(att, model, target_depth)
    if q0 is not None and params is not None:
        q0 = squeeze_to_setpoint(att, model, q0, params, rng, resolution)
    return att, q0
