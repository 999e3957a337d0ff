"""Quasi-static bowl world: spawning, overhead height maps, grasp outcomes and
the in-hand carry model used while the controller runs.

World coordinates are millimetres with z up. Once grasped, objects live in
the gripper frame (x along the fingers, y the closing axis, right finger at
+y). Before the fingertips touch, a grasped object is held fixed in that
frame on the mid-plane y = 0. At first contact its pose is locked to the
right fingertip: the object turns with the fingertip and its centre slides
along the locked fingertip direction so it stays on the mid-plane between
the two symmetric fingertips.
"""
import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..errors import DroppedObject, OverfilledBowl
from ..geometry import Pose, rot_y, rot_z
from ..grasp_planner import HeightMap
from ..kinematics import forward_kinematics, mirror
from .shapes import CATALOG, Shape, SimObject, signed_distance, top_surface

HM_RESOLUTION = 0.5  # mm per cell


@dataclass(frozen=True)
class Bowl:
    """Paraboloid bowl; ``center`` is the rim centre in world xy."""

    center: tuple = (0.0, 0.0)
    radius: float = 90.0
    depth: float = 40.0
    floor_z: float = 0.0

    @property
    def rim_z(self):
        return self.floor_z + self.depth

    @property
    def p_cen(self):
        return np.array([self.center[0], self.center[1], self.rim_z])

    def surface(self, x, y):
        r2 = ((np.asarray(x) - self.center[0]) ** 2 + (np.asarray(y) - self.center[1]) ** 2)
        return self.floor_z + self.depth * np.minimum(r2 / self.radius ** 2, 1.0)


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    counts: dict = field(default_factory=dict)     # class id -> object count
    shapes: dict = field(default_factory=dict)     # optional class id -> Shape overrides
    bowl: Bowl = Bowl()
    seed: int = 0
    two_object_rate: float = 0.1     # chance a touching neighbour comes along
    miss_rate: float = 0.05          # chance the closing motion slips off entirely
    capture_radius: float = 6.0      # mm, xy distance from the descent line
    grip_depth: float = 8.0          # mm below the grasp point still reachable
    touch_gap: float = 1.0           # mm, surface gap counted as touching
    contact_zone: float = 5.0        # mm, radius of the in-hand offset disk
    depth_noise: float = 0.2         # mm, height map noise sigma
    dropout: float = 0.02            # fraction of height map cells lost

    def shape_for(self, class_id):
        return self.shapes.get(int(class_id), CATALOG[int(class_id)])

    @property
    def classes(self):
        return sorted(int(c) for c, n in self.counts.items() if n > 0)

    def to_dict(self):
        return {
            "name": self.name,
            "counts": {str(k): int(v) for k, v in sorted(self.counts.items())},
            "shapes": {str(k): s.to_dict() for k, s in sorted(self.shapes.items())},
            "bowl": {"center": list(self.bowl.center), "radius": self.bowl.radius,
                     "depth": self.bowl.depth, "floor_z": self.bowl.floor_z},
            "seed": self.seed,
            "two_object_rate": self.two_object_rate,
            "miss_rate": self.miss_rate,
            "capture_radius": self.capture_radius,
            "grip_depth": self.grip_depth,
            "touch_gap": self.touch_gap,
            "contact_zone": self.contact_zone,
            "depth_noise": self.depth_noise,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        counts = {int(k): int(v) for k, v in d.pop("counts", {}).items()}
        if any(v < 0 for v in counts.values()):
            raise ValueError("object counts must be >= 0")
        for k in counts:
            if k not in CATALOG:
                raise ValueError(f"unknown object class {k}")
        shapes = {int(k): Shape.from_dict(v) for k, v in d.pop("shapes", {}).items()}
        b = d.pop("bowl", {})
        bowl = Bowl(tuple(b.get("center", (0.0, 0.0))), float(b.get("radius", 90.0)),
                    float(b.get("depth", 40.0)), float(b.get("floor_z", 0.0)))
        return cls(counts=counts, shapes=shapes, bowl=bowl, **d)


def load_scenario(path):
    with open(path) as fh:
        return Scenario.from_dict(json.load(fh))


def save_scenario(scenario, path):
    with open(path, "w") as fh:
        json.dump(scenario.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class Attachment:
    """Objects held between the fingertips, posed in the gripper frame.

    ``u_local`` and ``rel_rotation`` are set at first contact: the unit
    direction from the right fingertip centre to the primary object's centre
    and the object orientation, both in the right fingertip frame.
    """

    objects: list
    u_local: Optional[np.ndarray] = None
    rel_rotations: Optional[list] = None
    rel_offsets: Optional[list] = None     # secondary objects, primary-object frame
    offset: Optional[np.ndarray] = None    # contact point minus fingertip centre, gripper frame

    @property
    def object_ids(self):
        return [o.obj_id for o in self.objects]

    @property
    def engaged(self):
        return self.u_local is not None


@dataclass
class WorldState:
    objects: list
    bowl: Bowl
    seed: int
    attached: Optional[Attachment] = None
    next_id: int = 0

    def to_dict(self):
        return {
            "seed": self.seed,
            "bowl": [*self.bowl.center, self.bowl.radius, self.bowl.depth, self.bowl.floor_z],
            "objects": [{"id": o.obj_id, "class_id": o.class_id, "shape": o.shape.to_dict(),
                         "pose": np.round(o.pose.matrix(), 9).tolist()} for o in self.objects],
            "attached": None if self.attached is None else self.attached.object_ids,
        }

    def to_bytes(self):
        return json.dumps(self.to_dict(), sort_keys=True).encode()

    def digest(self):
        return hashlib.sha256(self.to_bytes()).hexdigest()


# ------------------------------------------------------------------ spawning

def _grid(bowl, resolution=HM_RESOLUTION):
    n = int(np.ceil(2 * bowl.radius / resolution))
    origin = (bowl.center[0] - bowl.radius, bowl.center[1] - bowl.radius)
    xs = origin[0] + (np.arange(n) + 0.5) * resolution
    ys = origin[1] + (np.arange(n) + 0.5) * resolution
    return origin, xs, ys


def _footprint(obj, origin, xs, ys, resolution, margin=0.0):
    """Row/col window covering the object's bounding circle."""
    c = obj.pose.position
    half = margin + max(max(np.linalg.norm(p.a - c), np.linalg.norm(p.b - c)) + p.radius
                        for p in obj.primitives())
    j0 = max(int((c[0] - half - origin[0]) / resolution), 0)
    j1 = min(int((c[0] + half - origin[0]) / resolution) + 2, len(xs))
    i0 = max(int((c[1] - half - origin[1]) / resolution), 0)
    i1 = min(int((c[1] + half - origin[1]) / resolution) + 2, len(ys))
    return slice(i0, i1), slice(j0, j1)


def _top_profile(obj, X, Y):
    """Upper surface of a lying object over grid points (nan where absent)."""
    z = np.full(X.shape, np.nan)
    for prim in obj.primitives():
        zt = top_surface(prim, X, Y)
        z = np.fmax(z, zt)
    return z


def settle(obj, heights, origin, xs, ys, resolution=HM_RESOLUTION):
    """Drop a lying object onto the height field; returns the resting object."""
    win = _footprint(obj, origin, xs, ys, resolution)
    X, Y = np.meshgrid(xs[win[1]], ys[win[0]])
    above = _top_profile(replace(obj, pose=Pose(obj.pose.position * [1, 1, 0],
                                                obj.pose.orientation)), X, Y)
    # with the axis horizontal the lower surface mirrors the upper one about z0
    mask = np.isfinite(above)
    z0 = float(np.max(heights[win][mask] + above[mask])) if mask.any() else 0.0
    pos = obj.pose.position.copy()
    pos[2] = z0
    return replace(obj, pose=Pose(pos, obj.pose.orientation)), win, X, Y


def spawn_bowl(scenario, seed=None, max_tries=200, resolution=HM_RESOLUTION):
    """Seeded drop-and-settle of every object in ``scenario.counts``.

    Objects lie flat with a random yaw, fall onto the current height field
    and rest on its highest point under their footprint, so they never
    interpenetrate at grid resolution. A drop position is rejected when the
    object would stick out of the bowl.
    """
    seed = scenario.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    bowl = scenario.bowl
    origin, xs, ys = _grid(bowl, resolution)
    X, Y = np.meshgrid(xs, ys)
    heights = bowl.surface(X, Y)
    classes = [c for c in sorted(scenario.counts) for _ in range(scenario.counts[c])]
    order = rng.permutation(len(classes))
    objects = []
    for obj_id, k in enumerate(order):
        cid = classes[k]
        shape = scenario.shape_for(cid)
        for _ in range(max_tries):
            reach = bowl.radius - shape.extent / 2.0 - 1.0
            rho = reach * np.sqrt(rng.uniform())
            phi = rng.uniform(0, 2 * np.pi)
            yaw = rng.uniform(0, np.pi)
            xy = np.array([bowl.center[0] + rho * np.cos(phi), bowl.center[1] + rho * np.sin(phi), 0.0])
            obj = SimObject(shape, Pose(xy, rot_z(yaw)), cid, obj_id)
            obj, win, WX, WY = settle(obj, heights, origin, xs, ys, resolution)
            if obj.pose.position[2] + shape.thickness_radius <= bowl.rim_z:
                break
        else:
            raise OverfilledBowl(f"could not place object {obj_id} (class {cid}) "
                                 f"after {max_tries} tries")
        top = _top_profile(obj, WX, WY)
        heights[win] = np.fmax(heights[win], top)
        objects.append(obj)
    return WorldState(objects, bowl, seed, None, len(objects))


# --------------------------------------------------------------- height map

def render_heightmap(world, resolution=HM_RESOLUTION, rng=None, depth_noise=0.0, dropout=0.0):
    """Overhead z-buffer of the pile over the bowl's bounding square.

    With an ``rng``, adds Gaussian depth noise and drops a fraction of
    cells to NaN the way a depth camera loses returns.
    """
    bowl = world.bowl
    origin, xs, ys = _grid(bowl, resolution)
    X, Y = np.meshgrid(xs, ys)
    heights = bowl.surface(X, Y)
    for obj in world.objects:
        win = _footprint(obj, origin, xs, ys, resolution)
        heights[win] = np.fmax(heights[win], _top_profile(obj, X[win], Y[win]))
    if rng is not None:
        if depth_noise > 0:
            heights = heights + rng.normal(0.0, depth_noise, heights.shape)
        if dropout > 0:
            heights[rng.uniform(size=heights.shape) < dropout] = np.nan
    return HeightMap(heights, origin, resolution)


# ------------------------------------------------------------ grasp outcome

@dataclass
class GraspOutcome:
    kind: str                       # "none", "one" or "two"
    objects: list = field(default_factory=list)
    offsets: list = field(default_factory=list)   # (dx, dz) per object, gripper frame, mm

    @property
    def count(self):
        return len(self.objects)


def _segment_gap(o1, o2):
    """Smallest surface gap between two objects (sampled along their primitive axes)."""
    best = np.inf
    for p in o1.primitives():
        s = np.linspace(0.0, 1.0, 25)[:, None]
        pts = p.a + s * (p.b - p.a)
        best = min(best, float(np.min(signed_distance(pts, o2.primitives()))) - p.radius)
    return best


def _line_distance(points, p0, direction):
    d = direction / np.linalg.norm(direction)
    rel = points - p0
    return np.linalg.norm(rel - np.outer(rel @ d, d), axis=1)


def grasp_attempt(world, target, scenario, rng):
    """Resolve a closing motion at ``target`` against the pile.

    Candidates sit within ``capture_radius`` of the descent line and within
    ``grip_depth`` below the grasp point. The nearest is taken; a touching
    neighbour joins it with probability ``two_object_rate``. Grasped objects
    leave the pile.
    """
    if not world.objects or rng.uniform() < scenario.miss_rate:
        return GraspOutcome("none")
    centers = np.array([o.pose.position for o in world.objects])
    tops = centers[:, 2] + np.array([o.shape.thickness_radius for o in world.objects])
    dist = _line_distance(centers, target.p_mean, target.v if np.linalg.norm(target.v) > 0
                          else np.array([0.0, 0.0, -1.0]))
    reach = (dist <= scenario.capture_radius) & (tops >= target.p_mean[2] - scenario.grip_depth)
    cand = np.flatnonzero(reach)
    if len(cand) == 0:
        return GraspOutcome("none")
    first = int(cand[np.lexsort((-tops[cand], dist[cand]))[0]])
    chosen = [first]
    touching = [i for i in range(len(world.objects)) if i != first
                and _segment_gap(world.objects[first], world.objects[i]) <= scenario.touch_gap]
    if touching and rng.uniform() < scenario.two_object_rate:
        touching.sort(key=lambda i: (float(np.linalg.norm(centers[i] - centers[first])), i))
        chosen.append(touching[0])
    r = scenario.contact_zone * np.sqrt(rng.uniform(size=len(chosen)))
    phi = rng.uniform(0, 2 * np.pi, size=len(chosen))
    offsets = [(float(a * np.cos(b)), float(a * np.sin(b))) for a, b in zip(r, phi)]
    grabbed = [world.objects[i] for i in chosen]
    world.objects = [o for i, o in enumerate(world.objects) if i not in chosen]
    return GraspOutcome("two" if len(chosen) == 2 else "one", grabbed, offsets)


def return_to_bowl(world, objects, rng):
    """Drop released objects back onto the pile near where they came from."""
    origin, xs, ys = _grid(world.bowl, HM_RESOLUTION)
    hm = render_heightmap(world)
    for obj in objects:
        reach = world.bowl.radius - obj.shape.extent / 2.0 - 1.0
        rho = reach * np.sqrt(rng.uniform())
        phi = rng.uniform(0, 2 * np.pi)
        xy = np.array([world.bowl.center[0] + rho * np.cos(phi),
                       world.bowl.center[1] + rho * np.sin(phi), 0.0])
        lying = SimObject(obj.shape, Pose(xy, rot_z(rng.uniform(0, np.pi))), obj.class_id, obj.obj_id)
        lying, win, WX, WY = settle(lying, hm.grid, origin, xs, ys)
        hm.grid[win] = np.fmax(hm.grid[win], _top_profile(lying, WX, WY))
        world.objects.append(lying)
    world.objects.sort(key=lambda o: o.obj_id)
    world.attached = None


# ---------------------------------------------------------- in-hand carry

def closing_config(alpha):
    """Parallel closing posture: link 2 turns in by alpha, link 3 turns back."""
    return np.array([0.0, -alpha, alpha, 0.0])


def place_in_hand(outcome, model, rng, nominal_depth=6.0):
    """Pose grasped objects in the gripper frame before the fingertips close.

    The primary object sits on the mid-plane y = 0, offset by its sampled
    (dx, dz) from the fingertip axis at the nominal closing posture, long
    axis at a random angle in the x-z plane. A second object is set beside
    it, just touching, and the pair is centred on the sampled offset so both
    bodies reach the fingertip.
    """
    first = outcome.objects[0]
    R = model.fingertip_radius
    gap = R + first.shape.thickness_radius - nominal_depth
    alpha = _alpha_for_gap(model, gap)
    tip = forward_kinematics(model, closing_config(alpha)).position
    dx, dz = outcome.offsets[0]
    tilt = rng.uniform(0, np.pi)
    anchor = np.array([tip[0] + dx, 0.0, tip[2] + dz])
    placed = [SimObject(first.shape, Pose(anchor, rot_y(tilt)), first.class_id, first.obj_id)]
    if outcome.count == 2:
        second = outcome.objects[1]
        side = rng.uniform(0, 2 * np.pi)
        direction = np.array([np.cos(side), 0.0, np.sin(side)])
        spin = rot_y(rng.uniform(0, np.pi))
        # march outward until the two bodies separate
        step, dist = 0.25, 0.0
        while True:
            dist += step
            cand = SimObject(second.shape, Pose(anchor + dist * direction, spin),
                             second.class_id, second.obj_id)
            if _segment_gap(placed[0], cand) > 0.2:
                break
        shift = -0.5 * dist * direction
        placed = [SimObject(o.shape, Pose(o.pose.position + shift, o.pose.orientation),
                            o.class_id, o.obj_id) for o in (placed[0], cand)]
    return Attachment(placed)


def _alpha_for_gap(model, gap):
    """Closing angle that puts the right fingertip centre at y = gap."""
    lo, hi = 0.0, np.pi / 2
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if forward_kinematics(model, closing_config(mid)).position[1] > gap:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fingertip_depth(att, model, q_right):
    """Deepest indentation of the right fingertip (R minus distance to the nearest object)."""
    p = forward_kinematics(model, q_right).position
    prims = [pr for o in att.objects for pr in o.primitives()]
    return model.fingertip_radius - float(signed_distance(p[None], prims)[0])


def close_gripper(att, model, target_depth=6.0, max_alpha=np.pi / 2, step=0.01):
    """Close in the parallel posture until the right fingertip is ``target_depth`` deep.

    Returns the joint vector, or None when the fingers close without reaching it.
    """
    lo = 0.0
    while fingertip_depth(att, model, closing_config(lo + step)) < target_depth:
        lo += step
        if lo + step > max_alpha:
            return None
    hi = lo + step
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if fingertip_depth(att, model, closing_config(mid)) < target_depth:
            lo = mid
        else:
            hi = mid
    q = closing_config(hi)
    engage(att, model, q)
    return q


def engage(att, model, q_right):
    """Lock the held objects to the right fingertip at the current posture."""
    ft = forward_kinematics(model, q_right)
    first = att.objects[0]
    rel = first.pose.position - ft.position
    att.u_local = ft.orientation.T @ (rel / np.linalg.norm(rel))
    att.rel_rotations = [ft.orientation.T @ o.pose.orientation for o in att.objects]
    att.rel_offsets = [first.pose.orientation.T @ (o.pose.position - first.pose.position)
                       for o in att.objects]
    att.offset = contact_offset(att, ft)


def contact_offset(att, ft):
    u = ft.orientation @ att.u_local
    prims = [pr for o in att.objects[:1] for pr in o.primitives()]
    # walk from the fingertip centre along u onto the object surface
    t, c = 0.0, ft.position
    for _ in range(64):
        d = float(signed_distance((c + t * u)[None], prims)[0])
        if d < 1e-9:
            break
        t += d
    return t * u


def carry(att, ft_pose):
    """Object poses for a given right-fingertip pose (mid-plane constraint).

    The primary object's centre lies on the locked fingertip direction, as
    far out as needed to reach the plane y = 0.
    """
    u = ft_pose.orientation @ att.u_local
    toward = -u[1]
    if toward <= 1e-6:
        raise DroppedObject("locked contact direction no longer points between the fingers")
    d = ft_pose.position[1] / toward
    centre = ft_pose.position + d * u
    R0 = ft_pose.orientation @ att.rel_rotations[0]
    posed = []
    for o, Rr, off in zip(att.objects, att.rel_rotations, att.rel_offsets):
        posed.append(SimObject(o.shape, Pose(centre + R0 @ off, ft_pose.orientation @ Rr),
                               o.class_id, o.obj_id))
    return posed


def apply_finger_motion(world_or_att, q_right, q_left, model):
    """Move the held objects with the fingers; returns the new contact offset.

    ``q_left`` must be the mirror of ``q_right``; the carry model relies on
    that symmetry to keep the object on the mid-plane.
    """
    att = world_or_att.attached if isinstance(world_or_att, WorldState) else world_or_att
    if att is None or not att.engaged:
        raise ValueError("no engaged attachment to move")
    if not np.allclose(mirror(model, q_right), q_left, atol=1e-9):
        raise ValueError("left finger targets must mirror the right finger")
    ft = forward_kinematics(model, q_right)
    att.objects = carry(att, ft)
    if fingertip_depth(att, model, q_right) < 0.0:
        raise DroppedObject("fingertips separated beyond the object")
    att.offset = contact_offset(att, ft)
    return att.offset
