"""Episode state machine: detect, grasp, in-hand control, classify.

One attempt starts in Initial and ends in a terminal outcome: Sorted after
a confident classification, Initial again when the classifier reports two
objects or a plane, or a failure once the regrasp budget is spent. Failed
grasps and control runs go back to Detect. Simulated time is tracked per
state; nothing depends on wall-clock time.
"""
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .classifier.model import predict
from .classifier.preprocess import PLANE_CLASS, TWO_OBJECT_CLASS, extract_samples
from .controller import ControllerParams
from .errors import InvalidEvent, WorldExhausted
from .grasp_planner import HeightMap, plan_grasp
from .kinematics import GripperModel, forward_kinematics
from .perception import DbscanParams, label_frame
from .simworld.closedloop import CONTROL_RESOLUTION, run_control_loop, squeeze_to_setpoint
from .simworld.tactile import FULL_RESOLUTION, render_tactile
from .simworld.world import (close_gripper, grasp_attempt, place_in_hand, render_heightmap,
                             return_to_bowl, spawn_bowl)

REPORT_SCHEMA = "smallgrasp.episode/1"


class State(str, Enum):
    INITIAL = "Initial"
    DETECT = "Detect"
    READY_FOR_GRASP = "ReadyForGrasp"
    GRASP = "Grasp"
    CONTROL = "Control"
    CLASSIFICATION = "Classification"
    SORTED = "Sorted"


class Event(str, Enum):
    START = "start"
    INADEQUATE_DEPTH = "inadequate_depth"
    VALID_TARGET = "valid_target"
    WRIST_ALIGNED = "wrist_aligned"
    CONTACT_DETECTED = "contact_detected"
    NO_CONTACT = "no_contact"
    CONVERGED = "converged"
    TIMEOUT = "timeout"
    LOST_CONTACT = "lost_contact"
    CLASSIFIED = "classified"          # an object class 1..20
    TWO_OBJECTS = "two_objects"        # class 21
    PLANE = "plane"                    # class 22
    RESET = "reset"


TRANSITIONS = {
    (State.INITIAL, Event.START): State.DETECT,
    (State.DETECT, Event.INADEQUATE_DEPTH): State.DETECT,
    (State.DETECT, Event.VALID_TARGET): State.READY_FOR_GRASP,
    (State.READY_FOR_GRASP, Event.WRIST_ALIGNED): State.GRASP,
    (State.GRASP, Event.CONTACT_DETECTED): State.CONTROL,
    (State.GRASP, Event.NO_CONTACT): State.DETECT,
    (State.CONTROL, Event.CONVERGED): State.CLASSIFICATION,
    (State.CONTROL, Event.TIMEOUT): State.DETECT,
    (State.CONTROL, Event.LOST_CONTACT): State.DETECT,
    (State.CLASSIFICATION, Event.CLASSIFIED): State.SORTED,
    (State.CLASSIFICATION, Event.TWO_OBJECTS): State.INITIAL,
    (State.CLASSIFICATION, Event.PLANE): State.INITIAL,
    (State.SORTED, Event.RESET): State.INITIAL,
}


def transition(state, event):
    try:
        return TRANSITIONS[(State(state), Event(event))]
    except (KeyError, ValueError):
        raise InvalidEvent(f"event {event!s} is not defined in state {state!s}") from None


def classification_event(class_id):
    if class_id == TWO_OBJECT_CLASS:
        return Event.TWO_OBJECTS
    if class_id == PLANE_CLASS:
        return Event.PLANE
    return Event.CLASSIFIED


# simulated seconds spent per step
STEP_TIME = {State.INITIAL: 0.0, State.DETECT: 0.5, State.READY_FOR_GRASP: 3.0,
             State.GRASP: 1.0, State.CLASSIFICATION: 0.1, State.SORTED: 2.0}


@dataclass
class EpisodeConfig:
    model: GripperModel = field(default_factory=GripperModel)
    controller: ControllerParams = field(default_factory=ControllerParams)
    classifier: Optional[object] = None        # ClassifierModel; None reports class 22
    dbscan: DbscanParams = field(default_factory=DbscanParams)
    max_regrasps: int = 3
    max_detect_retries: int = 5
    dwell: float = 2.0                          # s, settle after the fingers close
    relief_threshold: float = 1.0               # mm above the bowl surface counted as pile
    min_valid_fraction: float = 0.5
    control_resolution: int = CONTROL_RESOLUTION
    tactile_resolution: int = FULL_RESOLUTION
    close_depth: float = 6.0


@dataclass
class EpisodeReport:
    attempt_id: int
    seed: int
    outcome: str                 # sorted / grasp_fail / two_objects / plane_detected / control_timeout
    predicted_class: Optional[int]
    true_classes: list
    grasped: bool
    regrasps: int
    durations: dict
    transitions: list
    control_steps: int
    final_theta: Optional[float]
    trace: Optional[str]

    @property
    def outcome_label(self):
        return f"sorted({self.predicted_class})" if self.outcome == "sorted" else self.outcome

    def to_dict(self):
        r = lambda v: None if v is None else round(float(v), 6)
        return {"schema": REPORT_SCHEMA, "attempt_id": self.attempt_id, "seed": self.seed,
                "outcome": self.outcome_label, "predicted_class": self.predicted_class,
                "true_classes": self.true_classes, "grasped": self.grasped,
                "regrasps": self.regrasps,
                "durations": {k: round(v, 6) for k, v in self.durations.items()},
                "transitions": self.transitions, "control_steps": self.control_steps,
                "final_theta": r(self.final_theta), "trace": self.trace}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def pile_map(hm, bowl, threshold):
    """Height map restricted to the pile: cells well above the bowl surface, others NaN.

    The ROI centre goes to the highest point of the pile above the bowl.
    """
    X, Y = hm.cell_centers()
    relief = hm.grid - bowl.surface(X, Y)
    inside = np.hypot(X - bowl.center[0], Y - bowl.center[1]) < bowl.radius
    keep = inside & np.isfinite(relief) & (relief > threshold)
    pile = HeightMap(np.where(keep, hm.grid, np.nan), hm.origin, hm.resolution)
    if keep.any():
        i, j = np.unravel_index(int(np.argmax(np.where(keep, relief, -np.inf))), relief.shape)
        pile.roi_center = (hm.origin[0] + (j + 0.5) * hm.resolution,
                           hm.origin[1] + (i + 0.5) * hm.resolution)
    return pile, float(np.isfinite(hm.grid[inside]).mean())


class _Run:
    """Mutable bookkeeping for one attempt."""

    def __init__(self):
        self.state = State.INITIAL
        self.durations = {s.value: 0.0 for s in State}
        self.transitions = []
        self.clock = 0.0

    def spend(self, seconds):
        self.durations[self.state.value] += seconds
        self.clock += seconds

    def fire(self, event):
        new = transition(self.state, event)
        self.transitions.append([self.state.value, Event(event).value, new.value])
        self.state = new


def classify_grasp(att, q_right, cfg, rng):
    """Render the right sensor at full resolution and classify what it holds.

    No cluster maps to class 22 and two or more to class 21; a single cluster
    goes through the classifier.
    """
    ft = forward_kinematics(cfg.model, q_right)
    frame, _ = render_tactile(ft, att.objects, cfg.model.fingertip_radius, cfg.tactile_resolution)
    label_frame(frame, cfg.dbscan, rng)
    samples = extract_samples(frame)
    if not samples:
        return PLANE_CLASS
    if len(samples) >= 2:
        return TWO_OBJECT_CLASS
    if cfg.classifier is None:
        return PLANE_CLASS
    return predict(cfg.classifier, samples[0])[0]


def run_episode(world, scenario, cfg, rng, attempt_id=0, seed=0):
    """Drive one attempt through the machine; returns (report, control trace records)."""
    if not world.objects:
        raise WorldExhausted("the bowl is empty")
    run = _Run()
    run.fire(Event.START)
    regrasps, detect_misses = 0, 0
    grasped_any = False
    true_classes, trace, steps, theta = [], [], 0, None
    while True:
        if run.state is State.DETECT:
            run.spend(STEP_TIME[State.DETECT])
            if not world.objects:
                raise WorldExhausted("the bowl is empty")
            hm = render_heightmap(world, rng=rng, depth_noise=scenario.depth_noise,
                                  dropout=scenario.dropout)
            pile, valid = pile_map(hm, world.bowl, cfg.relief_threshold)
            if pile.roi_center is None or valid < cfg.min_valid_fraction:
                detect_misses += 1
                run.fire(Event.INADEQUATE_DEPTH)
                if detect_misses > cfg.max_detect_retries:
                    return _finish(run, "grasp_fail", None, true_classes, grasped_any, regrasps,
                                   steps, theta, attempt_id, seed), trace
                continue
            target = plan_grasp(pile, world.bowl.p_cen)
            run.fire(Event.VALID_TARGET)
        elif run.state is State.READY_FOR_GRASP:
            # wrist turned to target.theta, move to pre-grasp and descend along v
            run.spend(STEP_TIME[State.READY_FOR_GRASP])
            run.fire(Event.WRIST_ALIGNED)
        elif run.state is State.GRASP:
            run.spend(STEP_TIME[State.GRASP])
            outcome = grasp_attempt(world, target, scenario, rng)
            q0 = None
            if outcome.count:
                att = place_in_hand(outcome, cfg.model, rng)
                q0 = close_gripper(att, cfg.model, cfg.close_depth)
                if q0 is None:
                    return_to_bowl(world, outcome.objects, rng)
            if q0 is None:
                regrasps += 1
                run.fire(Event.NO_CONTACT)
                if regrasps > cfg.max_regrasps:
                    return _finish(run, "grasp_fail", None, true_classes, grasped_any, regrasps,
                                   steps, theta, attempt_id, seed), trace
                continue
            grasped_any = True
            world.attached = att
            true_classes = [o.class_id for o in outcome.objects]
            run.spend(cfg.dwell)
            q0 = squeeze_to_setpoint(att, cfg.model, q0, cfg.controller, rng,
                                     cfg.control_resolution, cfg.dbscan)
            run.fire(Event.CONTACT_DETECTED)
        elif run.state is State.CONTROL:
            ctl = run_control_loop(att, cfg.model, cfg.controller, q0, rng,
                                   cfg.control_resolution, cfg.dbscan, t0=run.clock)
            run.spend(ctl.steps * cfg.controller.dt)
            trace = ctl.records
            steps += ctl.steps
            theta = ctl.thetas[-1] if ctl.thetas else None
            if ctl.converged:
                q_final = ctl.q_right
                run.fire(Event.CONVERGED)
                continue
            return_to_bowl(world, att.objects, rng)
            regrasps += 1
            run.fire(Event.TIMEOUT if ctl.outcome == "timeout" else Event.LOST_CONTACT)
            if regrasps > cfg.max_regrasps:
                return _finish(run, "control_timeout", None, true_classes, grasped_any,
                               regrasps, steps, theta, attempt_id, seed), trace
        elif run.state is State.CLASSIFICATION:
            run.spend(STEP_TIME[State.CLASSIFICATION])
            cls = classify_grasp(att, q_final, cfg, rng)
            event = classification_event(cls)
            run.fire(event)
            if event is Event.CLASSIFIED:
                run.spend(STEP_TIME[State.SORTED])
                world.attached = None
                return _finish(run, "sorted", cls, true_classes, grasped_any, regrasps, steps,
                               theta, attempt_id, seed), trace
            return_to_bowl(world, att.objects, rng)
            kind = "two_objects" if event is Event.TWO_OBJECTS else "plane_detected"
            return _finish(run, kind, cls, true_classes, grasped_any, regrasps, steps, theta,
                           attempt_id, seed), trace
        else:   # pragma: no cover - every live state is handled above
            raise InvalidEvent(f"no driver for state {run.state}")


def _finish(run, outcome, cls, true_classes, grasped, regrasps, steps, theta, attempt_id, seed):
    return EpisodeReport(attempt_id, seed, outcome, cls, list(true_classes), grasped, regrasps,
                         run.durations, run.transitions, steps, theta,
                         f"traces/attempt_{attempt_id:05d}.jsonl" if steps else None)


# ------------------------------------------------------------------ batches

def episode_seed(batch_seed, index):
    """Independent per-episode seed derived from the batch seed."""
    return int(np.random.SeedSequence([int(batch_seed), int(index)]).generate_state(1)[0])


def run_seeded_episode(scenario, cfg, batch_seed, index):
    """Fresh world and rng for episode ``index``; nothing is shared between episodes."""
    seed = episode_seed(batch_seed, index)
    world = spawn_bowl(scenario, seed=seed)
    rng = np.random.default_rng(seed)
    return run_episode(world, scenario, cfg, rng, attempt_id=index, seed=seed)


def _batch_job(args):
    return run_seeded_episode(*args)


def run_batch(scenario, cfg, batch_seed, episodes, workers=1):
    """Reports and traces for ``episodes`` seeded attempts, in index order."""
    jobs = [(scenario, cfg, batch_seed, i) for i in range(episodes)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_batch_job, jobs, chunksize=1))
    return [_batch_job(j) for j in jobs]


def true_label(report):
    if len(report.true_classes) >= 2:
        return TWO_OBJECT_CLASS
    return report.true_classes[0] if report.true_classes else PLANE_CLASS


def summarize(reports):
    """Outcome counts, grasp success and the true-vs-predicted matrix of classified attempts."""
    from .classifier.evaluate import ConfusionMatrix
    outcomes = {}
    for r in reports:
        key = "sorted" if r.outcome == "sorted" else r.outcome
        outcomes[key] = outcomes.get(key, 0) + 1
    classified = [r for r in reports if r.predicted_class is not None]
    cm = ConfusionMatrix.from_pairs([(true_label(r), r.predicted_class) for r in classified])
    return {"attempts": len(reports),
            "successful_grasps": sum(r.grasped for r in reports),
            "sorted": outcomes.get("sorted", 0),
            "outcomes": dict(sorted(outcomes.items())),
            "correct_sorts": sum(1 for r in classified if r.outcome == "sorted"
                                 and r.predicted_class == true_label(r)),
            "confusion": cm.to_dict()}
