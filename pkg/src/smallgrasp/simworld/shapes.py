"""Primitive object shapes, ray intersection and signed distance.

Every object is a union of capsules and capped cylinders described in its own
frame, long axis along local +x, origin at the centre of its extent.
"""
from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose

SIZE_RANGE = (5.0, 25.0)  # mm, largest dimension


@dataclass(frozen=True)
class Primitive:
    kind: str           # "capsule" or "cylinder"
    a: np.ndarray
    b: np.ndarray
    radius: float

    def transformed(self, pose):
        return Primitive(self.kind, pose.apply(self.a), pose.apply(self.b), self.radius)


@dataclass(frozen=True)
class Shape:
    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def sphere(cls, r):
        return cls("sphere", {"r": float(r)})

    @classmethod
    def capsule(cls, r, length):
        return cls("capsule", {"r": float(r), "len": float(length)})

    @classmethod
    def screw(cls, head_r, head_h, shaft_r, shaft_len):
        return cls("screw", {"head_r": float(head_r), "head_h": float(head_h),
                             "shaft_r": float(shaft_r), "shaft_len": float(shaft_len)})

    def primitives(self):
        p = self.params
        if self.kind == "sphere":
            c = np.zeros(3)
            return [Primitive("capsule", c, c.copy(), p["r"])]
        if self.kind == "capsule":
            h = max(p["len"] / 2.0 - p["r"], 0.0)
            return [Primitive("capsule", np.array([-h, 0.0, 0.0]), np.array([h, 0.0, 0.0]), p["r"])]
        if self.kind == "screw":
            half = (p["head_h"] + p["shaft_len"]) / 2.0
            head_end = -half + p["head_h"]
            tip = max(half - p["shaft_r"], head_end)
            return [
                Primitive("cylinder", np.array([-half, 0.0, 0.0]), np.array([head_end, 0.0, 0.0]), p["head_r"]),
                Primitive("capsule", np.array([head_end, 0.0, 0.0]), np.array([tip, 0.0, 0.0]), p["shaft_r"]),
            ]
        raise ValueError(f"unknown shape kind {self.kind!r}")

    @property
    def extent(self):
        """Largest dimension in mm."""
        p = self.params
        if self.kind == "sphere":
            return 2 * p["r"]
        if self.kind == "capsule":
            return max(p["len"], 2 * p["r"])
        return max(p["head_h"] + p["shaft_len"], 2 * p["head_r"])

    @property
    def thickness_radius(self):
        """Half-height of the object lying on its side."""
        p = self.params
        if self.kind == "screw":
            return max(p["head_r"], p["shaft_r"])
        return p["r"]

    def to_dict(self):
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        return cls(d.pop("kind"), {k: float(v) for k, v in d.items()})


def world_primitives(shape, pose):
    return [prim.transformed(pose) for prim in shape.primitives()]


# ---------------------------------------------------------------- intersection

def _ray_sphere(ro, rd, c, r):
    oc = ro - c
    b = rd @ oc
    cc = oc @ oc - r * r
    h = b * b - cc
    t = np.full(len(rd), np.inf)
    ok = h >= 0
    tt = -b[ok] - np.sqrt(h[ok])
    t[np.flatnonzero(ok)[tt > 0]] = tt[tt > 0]
    return t


def _ray_tube(ro, rd, a, b, r):
    """First hit with the lateral surface of the finite tube a-b."""
    ba = b - a
    baba = ba @ ba
    t = np.full(len(rd), np.inf)
    if baba < 1e-18:
        return t
    oa = ro - a
    bard = rd @ ba
    baoa = ba @ oa
    rdoa = rd @ oa
    oaoa = oa @ oa
    A = baba - bard * bard
    B = baba * rdoa - baoa * bard
    C = baba * oaoa - baoa * baoa - r * r * baba
    h = B * B - A * C
    ok = (A > 1e-12 * baba) & (h >= 0)
    tt = np.full(len(rd), np.inf)
    tt[ok] = (-B[ok] - np.sqrt(h[ok])) / A[ok]
    y = baoa + np.where(ok, tt, 0.0) * bard
    hit = ok & (tt > 0) & (y >= 0) & (y <= baba)
    t[hit] = tt[hit]
    return t


def _ray_disc(ro, rd, centre, normal, r):
    denom = rd @ normal
    t = np.full(len(rd), np.inf)
    ok = np.abs(denom) > 1e-12
    tt = np.full(len(rd), np.inf)
    tt[ok] = ((centre - ro) @ normal) / denom[ok]
    p = ro + np.where(ok, tt, 0.0)[:, None] * rd
    inside = ok & (tt > 0) & (np.sum((p - centre) ** 2, axis=1) <= r * r)
    t[inside] = tt[inside]
    return t


def ray_hits(ro, rd, prims):
    """Distance along unit rays ``rd`` from ``ro`` to the first surface hit (inf on miss)."""
    ro = np.asarray(ro, float)
    rd = np.asarray(rd, float).reshape(-1, 3)
    t = np.full(len(rd), np.inf)
    for prim in prims:
        t = np.minimum(t, _ray_tube(ro, rd, prim.a, prim.b, prim.radius))
        if prim.kind == "capsule":
            t = np.minimum(t, _ray_sphere(ro, rd, prim.a, prim.radius))
            t = np.minimum(t, _ray_sphere(ro, rd, prim.b, prim.radius))
        else:
            n = prim.b - prim.a
            n = n / np.linalg.norm(n)
            t = np.minimum(t, _ray_disc(ro, rd, prim.a, n, prim.radius))
            t = np.minimum(t, _ray_disc(ro, rd, prim.b, n, prim.radius))
    return t


# -------------------------------------------------------------- signed distance

def _sd_capsule(p, a, b, r):
    ba = b - a
    pa = p - a
    baba = ba @ ba
    h = np.clip(pa @ ba / baba, 0.0, 1.0) if baba > 0 else np.zeros(len(p))
    return np.linalg.norm(pa - h[:, None] * ba, axis=1) - r


def _sd_cylinder(p, a, b, r):
    ba = b - a
    pa = p - a
    baba = ba @ ba
    paba = pa @ ba
    x = np.linalg.norm(pa * baba - np.outer(paba, ba), axis=1) - r * baba
    y = np.abs(paba - baba * 0.5) - baba * 0.5
    x2 = x * x
    y2 = y * y * baba
    d = np.where(np.maximum(x, y) < 0, -np.minimum(x2, y2),
                 np.where(x > 0, x2, 0.0) + np.where(y > 0, y2, 0.0))
    return np.sign(d) * np.sqrt(np.abs(d)) / baba


def signed_distance(points, prims):
    points = np.asarray(points, float).reshape(-1, 3)
    d = np.full(len(points), np.inf)
    for prim in prims:
        f = _sd_capsule if prim.kind == "capsule" else _sd_cylinder
        d = np.minimum(d, f(points, prim.a, prim.b, prim.radius))
    return d


def support(prims, direction):
    """Largest extent of the primitives along ``direction``."""
    u = np.asarray(direction, float)
    u = u / np.linalg.norm(u)
    best = -np.inf
    for prim in prims:
        ends = max(prim.a @ u, prim.b @ u)
        if prim.kind == "capsule":
            best = max(best, ends + prim.radius)
        else:
            ax = prim.b - prim.a
            ax = ax / np.linalg.norm(ax)
            best = max(best, ends + prim.radius * np.sqrt(max(0.0, 1 - (ax @ u) ** 2)))
    return best


# ------------------------------------------------------------------ top surface

def top_surface(prim, xs, ys):
    """Upper surface height of a horizontal primitive over grid points (nan where absent)."""
    a, b, r = prim.a, prim.b, prim.radius
    ab = b[:2] - a[:2]
    L2 = ab @ ab
    dx = xs - a[0]
    dy = ys - a[1]
    if L2 > 0:
        s = (dx * ab[0] + dy * ab[1]) / L2
    else:
        s = np.zeros_like(xs)
    if prim.kind == "capsule":
        s = np.clip(s, 0.0, 1.0)
        valid = np.ones_like(xs, dtype=bool)
    else:
        valid = (s >= 0) & (s <= 1)
    px = a[0] + s * ab[0]
    py = a[1] + s * ab[1]
    d2 = (xs - px) ** 2 + (ys - py) ** 2
    valid &= d2 <= r * r
    z = np.full(xs.shape, np.nan)
    z[valid] = a[2] + np.sqrt(r * r - d2[valid])
    return z


# ---------------------------------------------------------------------- catalog

INCH = 25.4

# class_id -> Shape. 1-9 machine screws, 10-20 daily objects.
CATALOG = {
    1: Shape.screw(head_r=2.7, head_h=1.9, shaft_r=1.42, shaft_len=0.5 * INCH),    # 4-40 x 1/2
    2: Shape.screw(head_r=2.7, head_h=1.9, shaft_r=1.30, shaft_len=0.5 * INCH),    # 4-48 x 1/2
    3: Shape.screw(head_r=4.7, head_h=3.0, shaft_r=2.41, shaft_len=0.5 * INCH),    # 10-24 x 1/2
    4: Shape.screw(head_r=4.7, head_h=3.0, shaft_r=2.30, shaft_len=0.5 * INCH),    # 10-32 x 1/2
    5: Shape.screw(head_r=2.7, head_h=1.9, shaft_r=1.42, shaft_len=0.25 * INCH),   # 4-40 x 1/4
    6: Shape.screw(head_r=4.7, head_h=3.0, shaft_r=2.41, shaft_len=0.25 * INCH),   # 10-24 x 1/4
    7: Shape.screw(head_r=2.7, head_h=1.9, shaft_r=1.42, shaft_len=0.375 * INCH),  # 4-40 x 3/8
    8: Shape.screw(head_r=4.7, head_h=3.0, shaft_r=2.30, shaft_len=0.375 * INCH),  # 10-32 x 3/8
    9: Shape.screw(head_r=5.5, head_h=3.5, shaft_r=3.17, shaft_len=0.5 * INCH),    # 1/4-28 x 1/2
    10: Shape.sphere(3.0),
    11: Shape.sphere(4.0),
    12: Shape.sphere(5.5),
    13: Shape.sphere(7.5),
    14: Shape.sphere(12.5),
    15: Shape.capsule(2.5, 11.0),
    16: Shape.capsule(3.5, 16.0),
    17: Shape.capsule(4.0, 21.0),
    18: Shape.capsule(1.2, 14.0),
    19: Shape.capsule(2.0, 24.0),
    20: Shape.capsule(5.0, 13.0),
}


def shape_for_class(class_id):
    return CATALOG[int(class_id)]


@dataclass
class SimObject:
    shape: Shape
    pose: Pose
    class_id: int
    obj_id: int = 0

    def __post_init__(self):
        lo, hi = SIZE_RANGE
        if not lo <= self.shape.extent <= hi:
            raise ValueError(f"object extent {self.shape.extent:.2f} mm outside {SIZE_RANGE}")
        if not 1 <= self.class_id <= 20:
            raise ValueError("class_id must lie in 1..20")

    def primitives(self):
        return world_primitives(self.shape, self.pose)
