"""Synthetic fingertip presses for building classification data.

A press holds one object (or two side by side) against the sensor along a
contact direction near the pole and ramps the indentation over a number of
frames, like pushing a part into the gel by hand.
"""
from dataclasses import dataclass, field

import numpy as np

from ..frames import direction_to_pixel
from ..geometry import Pose
from .shapes import SimObject, signed_distance
from .tactile import FULL_RESOLUTION, render_tactile

TWO_OBJECTS = 21


@dataclass
class PressConfig:
    frames: int = 50
    resolution: int = FULL_RESOLUTION
    fingertip_radius: float = 15.5
    depth_range: tuple = (4.5, 8.0)   # mm of indentation over the ramp
    max_polar: float = 0.45           # rad, contact direction off the pole
    max_tilt: float = 0.15            # rad, long axis out of the tangent plane
    depth_noise: float = 0.02         # mm
    rgb_noise: float = 0.01
    pair_gap: float = 0.3             # mm between the two bodies of a pair press


@dataclass
class PressFrame:
    frame: object
    class_id: int
    objects: list
    truth_pixels: list = field(default_factory=list)   # (row, col) per object


def _tangent_basis(u):
    helper = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(u, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(u, e1)


def _orientation(u, yaw, tilt, roll):
    """Long axis at ``yaw`` in the tangent plane at u, tilted toward u, rolled about itself."""
    e1, e2 = _tangent_basis(u)
    x = np.cos(tilt) * (np.cos(yaw) * e1 + np.sin(yaw) * e2) + np.sin(tilt) * u
    y = np.cross(u, x)
    y /= np.linalg.norm(y)
    z = np.cross(x, y)
    y, z = np.cos(roll) * y + np.sin(roll) * z, -np.sin(roll) * y + np.cos(roll) * z
    return np.stack([x, y, z], axis=1)


def _random_angles(rng, max_tilt):
    return rng.uniform(0, np.pi), rng.uniform(-max_tilt, max_tilt), rng.uniform(0, 2 * np.pi)


def _distance_for_depth(shape, orientation, u, depth, R):
    """Centre distance along u at which the object indents the gel by ``depth``."""
    lo, hi = 0.0, R + shape.extent
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        prims = [p.transformed(Pose(mid * u, orientation)) for p in shape.primitives()]
        gap = float(signed_distance(np.zeros((1, 3)), prims)[0])
        if R - gap > depth:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _polar_dir(polar, az):
    return np.array([np.sin(polar) * np.cos(az), np.sin(polar) * np.sin(az), np.cos(polar)])


def _pair_gap(objs):
    s = np.linspace(0, 1, 25)[:, None]
    return min(float(np.min(signed_distance(p.a + s * (p.b - p.a), objs[1].primitives())))
               - p.radius for p in objs[0].primitives())


def _place(shapes, class_ids, rng, cfg):
    """Contact directions and orientations for one object, or a pair that does not overlap."""
    if len(shapes) == 1:
        u = _polar_dir(cfg.max_polar * np.sqrt(rng.uniform()), rng.uniform(0, 2 * np.pi))
        return [(u, _orientation(u, *_random_angles(rng, cfg.max_tilt)))]
    # a pair straddles the pole, each body the same angle off it, lying roughly side by side
    az = rng.uniform(0, 2 * np.pi)
    across = np.array([-np.sin(az), np.cos(az), 0.0])
    angles = [_random_angles(rng, cfg.max_tilt) for _ in shapes]
    jitter = rng.uniform(-0.3, 0.3, size=len(shapes))
    for half in np.arange(0.03, 1.2, 0.01):
        us = [_polar_dir(half, az), _polar_dir(half, az + np.pi)]
        rots = []
        for u, (_, tilt, roll), dj in zip(us, angles, jitter):
            e1, e2 = _tangent_basis(u)
            yaw = np.arctan2(across @ e2, across @ e1) + dj
            rots.append(_orientation(u, yaw, tilt, roll))
        objs = [SimObject(shape, Pose(_distance_for_depth(shape, rot, u, cfg.depth_range[1],
                                                          cfg.fingertip_radius) * u, rot), cid)
                for shape, cid, u, rot in zip(shapes, class_ids, us, rots)]
        if _pair_gap(objs) > cfg.pair_gap:
            return list(zip(us, rots))
    raise RuntimeError("could not separate the press pair")


def simulate_press(shapes, class_ids, rng, cfg=PressConfig()):
    """Frames of one press; two shapes give a two-object press labelled 21.

    Indentation ramps linearly between two depths drawn from ``depth_range``.
    """
    shapes, class_ids = list(shapes), list(class_ids)
    label = class_ids[0] if len(shapes) == 1 else TWO_OBJECTS
    R = cfg.fingertip_radius
    placement = _place(shapes, class_ids, rng, cfg)
    d_a, d_b = np.sort(rng.uniform(*cfg.depth_range, size=2))
    depths = np.linspace(d_a, d_b, cfg.frames) if cfg.frames > 1 else [rng.uniform(*cfg.depth_range)]
    truth = [direction_to_pixel(u, cfg.resolution) for u, _ in placement]
    out = []
    for k, depth in enumerate(depths):
        objs = []
        for shape, cid, (u, rot) in zip(shapes, class_ids, placement):
            d = _distance_for_depth(shape, rot, u, depth, R)
            objs.append(SimObject(shape, Pose(d * u, rot), cid))
        frame, _ = render_tactile(Pose.identity(), objs, R, cfg.resolution, timestamp=0.02 * k)
        if cfg.depth_noise:
            frame.depth = np.minimum(frame.depth + rng.normal(0, cfg.depth_noise, frame.depth.shape), R)
        if cfg.rgb_noise:
            frame.rgb = np.clip(frame.rgb + rng.normal(0, cfg.rgb_noise, frame.rgb.shape), 0.0, 1.0)
        out.append(PressFrame(frame, label, objs, truth))
    return out
