"""Overhead height-map grasp planning.

The pile apex (global maximum cell) centres a square region of interest; the
mean position of the k highest cells inside it is the grasp point, the
approach vector runs from the bowl rim centre to that point, and the wrist
angle follows from the vector's xy components.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyRegion, FormatError

ROI_SIDE = 24.0        # mm
TOP_K = 800
PREGRASP_HEIGHT = 600.0  # mm above the desk
HEIGHTMAP_MAGIC = "SGHEIGHTMAP"
HEIGHTMAP_VERSION = 1


@dataclass
class HeightMap:
    """Elevation grid; cell (i, j) is centred at origin + ((j + .5) res, (i + .5) res).

    Rows run along world y, columns along world x. NaN marks dropped-out cells.
    """

    grid: np.ndarray
    origin: tuple
    resolution: float = 0.5
    roi_center: Optional[tuple] = None
    roi_side: float = ROI_SIDE

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 2:
            raise ValueError("height map grid must be 2-D")
        if self.resolution <= 0:
            raise ValueError("resolution must be > 0")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def shape(self):
        return self.grid.shape

    def cell_centers(self):
        rows, cols = self.grid.shape
        xs = self.origin[0] + (np.arange(cols) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(rows) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)

    def cell_of(self, xy):
        j = int(np.floor((xy[0] - self.origin[0]) / self.resolution))
        i = int(np.floor((xy[1] - self.origin[1]) / self.resolution))
        return i, j

    def valid_fraction(self):
        return float(np.isfinite(self.grid).mean()) if self.grid.size else 0.0

    def roi_slices(self):
        """Row and column slices of the ROI: cells whose centre lies in [c - s/2, c + s/2)."""
        if self.roi_center is None:
            raise EmptyRegion("height map has no ROI centre")
        half = self.roi_side / 2.0
        rows, cols = self.grid.shape

        def span(c, o, n):
            lo = int(np.ceil((c - half - o) / self.resolution - 0.5 - 1e-9))
            hi = int(np.ceil((c + half - o) / self.resolution - 0.5 - 1e-9))
            return slice(max(lo, 0), min(max(hi, 0), n))
        return (span(self.roi_center[1], self.origin[1], rows),
                span(self.roi_center[0], self.origin[0], cols))


def apex_center(hm):
    """World xy of the global maximum cell (first in row-major order on ties)."""
    g = np.where(np.isfinite(hm.grid), hm.grid, -np.inf)
    if not np.isfinite(g).any():
        raise EmptyRegion("height map holds no valid cells")
    i, j = np.unravel_index(int(np.argmax(g)), g.shape)
    return (hm.origin[0] + (j + 0.5) * hm.resolution, hm.origin[1] + (i + 0.5) * hm.resolution)


def top_k_mean(hm, k=TOP_K):
    """Mean world position of the k highest valid ROI cells.

    Ties at the k-th height go to the earlier cell in row-major order.
    """
    rs, cs = hm.roi_slices()
    roi = hm.grid[rs, cs]
    xs, ys = hm.cell_centers()
    xs, ys = xs[rs, cs].ravel(), ys[rs, cs].ravel()
    z = roi.ravel()
    ok = np.flatnonzero(np.isfinite(z))
    if len(ok) == 0:
        raise EmptyRegion("region of interest contains no valid cells")
    k = min(int(k), len(ok))
    zk = z[ok]
    if k < len(ok):
        kth = np.partition(zk, len(zk) - k)[len(zk) - k]
        above = ok[zk > kth]
        ties = ok[zk == kth][:k - len(above)]
        chosen = np.concatenate([above, ties])
    else:
        chosen = ok
    return np.array([xs[chosen].mean(), ys[chosen].mean(), z[chosen].mean()])


@dataclass
class GraspTarget:
    p_mean: np.ndarray
    p_cen: np.ndarray
    v: np.ndarray
    theta: float
    waypoints: list = field(default_factory=list)


def grasp_pose(p_mean, p_cen):
    p_mean = np.asarray(p_mean, dtype=float)
    p_cen = np.asarray(p_cen, dtype=float)
    v = p_mean - p_cen
    theta = 0.0 if v[0] == 0 and v[1] == 0 else float(np.arctan2(v[0], v[1]))
    return GraspTarget(p_mean, p_cen, v, theta)


def approach_waypoints(target, pregrasp_height=PREGRASP_HEIGHT, descent_offset=60.0):
    """Pre-grasp above the rim centre, the rim centre, a straight descent along v, close."""
    v_hat = target.v / max(np.linalg.norm(target.v), 1e-12)
    start = target.p_mean - descent_offset * v_hat
    return [
        {"name": "pregrasp", "position": [target.p_cen[0], target.p_cen[1], pregrasp_height],
         "wrist": target.theta},
        {"name": "rim_center", "position": list(target.p_cen), "wrist": target.theta},
        {"name": "descent_start", "position": list(start), "wrist": target.theta},
        {"name": "grasp", "position": list(target.p_mean), "wrist": target.theta},
        {"name": "close", "position": list(target.p_mean), "wrist": target.theta},
    ]


def plan_grasp(hm, p_cen, k=TOP_K):
    if hm.roi_center is None:
        hm.roi_center = apex_center(hm)
    target = grasp_pose(top_k_mean(hm, k), p_cen)
    target.waypoints = approach_waypoints(target)
    return target


def save_heightmap(hm, path):
    with open(path, "wb") as fh:
        np.savez_compressed(
            fh, magic=np.array(HEIGHTMAP_MAGIC), version=np.array(HEIGHTMAP_VERSION),
            grid=hm.grid, origin=np.array(hm.origin), resolution=np.array(hm.resolution),
            roi_side=np.array(hm.roi_side),
            roi_center=np.array(hm.roi_center if hm.roi_center is not None else (np.nan, np.nan)))


def load_heightmap(path):
    with np.load(path, allow_pickle=False) as z:
        if "magic" not in z or str(z["magic"]) != HEIGHTMAP_MAGIC:
            raise FormatError(f"{path}: not a height map container")
        if int(z["version"]) != HEIGHTMAP_VERSION:
            raise FormatError(f"{path}: unsupported height map version")
        rc = z["roi_center"]
        return HeightMap(z["grid"].copy(), tuple(z["origin"]), float(z["resolution"]),
                         None if np.isnan(rc).any() else tuple(rc), float(z["roi_side"]))
