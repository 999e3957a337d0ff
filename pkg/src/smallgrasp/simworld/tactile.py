"""Hemispherical visuotactile sensor renderer.

The gel is modelled by ray clamping: along every viewing ray from the
fingertip centre the surface sits at ``min(R, distance to the first object
hit)``, with deformation capped at 20 mm. No FEM, no photometrics; RGB is a
normal-map style shading of the depth field.
"""
from functools import lru_cache

import numpy as np

from ..frames import TactileFrame, hemisphere_directions, pixel_arc_mm
from .shapes import ray_hits

MAX_DEFORMATION = 20.0  # mm
FULL_RESOLUTION = 640
BACKGROUND_RGB = (0.5, 0.5, 0.5)


@lru_cache(maxsize=8)
def _rays(resolution):
    dirs, valid = hemisphere_directions(resolution)
    rows, cols = np.nonzero(valid)
    return dirs, valid, rows, cols, dirs[rows, cols]


def shade(depth, fingertip_radius):
    """Normal-map RGB proxy: red/green encode surface slope, blue the deformation."""
    step = pixel_arc_mm(depth.shape[0], fingertip_radius)
    gy, gx = np.gradient(depth, step)
    rgb = np.empty(depth.shape + (3,))
    rgb[..., 0] = 0.5 + 0.5 * np.tanh(gx)
    rgb[..., 1] = 0.5 + 0.5 * np.tanh(gy)
    rgb[..., 2] = 0.5 + 0.5 * np.clip((fingertip_radius - depth) / fingertip_radius, 0.0, 1.0)
    return rgb


def render_depth(prims_local, fingertip_radius, resolution=FULL_RESOLUTION,
                 max_deformation=MAX_DEFORMATION):
    """Radial depth grid for primitives already expressed in the fingertip frame."""
    _, valid, rows, cols, rays = _rays(resolution)
    depth = np.full((resolution, resolution), float(fingertip_radius))
    near = [p for p in prims_local if _may_touch(p, fingertip_radius)]
    if not near:
        return depth
    # only rays inside some primitive's bounding cone can hit it within R
    sel = np.zeros(len(rays), dtype=bool)
    for p in near:
        sel |= _cone_mask(p, rays)
    idx = np.flatnonzero(sel)
    t = ray_hits(np.zeros(3), rays[idx], near)
    floor = max(fingertip_radius - max_deformation, 0.0)
    depth[rows[idx], cols[idx]] = np.clip(t, floor, fingertip_radius)
    return depth


def _bounding_sphere(prim):
    c = 0.5 * (prim.a + prim.b)
    return c, 0.5 * np.linalg.norm(prim.b - prim.a) + prim.radius


def _may_touch(prim, fingertip_radius):
    c, rho = _bounding_sphere(prim)
    return np.linalg.norm(c) - rho < fingertip_radius


def _cone_mask(prim, rays):
    c, rho = _bounding_sphere(prim)
    dist = np.linalg.norm(c)
    if dist <= rho * 1.0001:
        return np.ones(len(rays), dtype=bool)
    return rays @ (c / dist) >= np.cos(np.arcsin(rho / dist)) - 1e-9


def render_tactile(fingertip_pose, objects, fingertip_radius, resolution=FULL_RESOLUTION,
                   timestamp=0.0, sensor_id="right", max_deformation=MAX_DEFORMATION):
    """Render the sensor seeing ``objects`` (SimObjects posed in the gripper frame).

    Returns the frame and its full point cloud; labels are left at 0 for
    perception to fill in.
    """
    prims = []
    for obj in objects:
        for prim in obj.primitives():
            prims.append(type(prim)(prim.kind,
                                    fingertip_pose.inverse_apply(prim.a),
                                    fingertip_pose.inverse_apply(prim.b),
                                    prim.radius))
    depth = render_depth(prims, fingertip_radius, resolution, max_deformation)
    frame = TactileFrame(depth=depth, fingertip_radius=fingertip_radius,
                         rgb=shade(depth, fingertip_radius), sensor_pose=fingertip_pose,
                         timestamp=timestamp, sensor_id=sensor_id)
    return frame, frame.cloud()
