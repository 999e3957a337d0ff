"""Tactile point-cloud perception.

A frame's cloud is thresholded on radial deformation, a small random share of
undeformed points is mixed back in to stabilise density estimates, DBSCAN
segments the result and up to four clusters are kept, largest first. The
contact estimate used by the controller is the mean of the least-deformed
30 % of the primary cluster.
"""
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import DegenerateCluster, NoContact

UNDEFORMED = 0
NOISE = -1
MAX_CLUSTERS = 4
CONTROL_LIMIT = 5000
CALIBRATION_SLACK = 0.5  # mm


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 1.5
    min_pts: int = 8
    augment_fraction: float = 0.04
    deform_threshold: float = 3.0

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        if not 0.0 <= self.augment_fraction <= 1.0:
            raise ValueError("augment_fraction must lie in [0, 1]")


class TactilePoint(NamedTuple):
    position: np.ndarray
    r: float
    deformation: float
    label: int


@dataclass
class TactileCloud:
    """Fingertip-frame points; ``pixels`` holds their (row, col) in the depth grid."""

    positions: np.ndarray
    fingertip_radius: float
    capture_mode: str = "full"
    sensor_id: str = "right"
    pixels: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if self.capture_mode not in ("full", "control-truncated"):
            raise ValueError(f"unknown capture_mode {self.capture_mode!r}")
        if self.capture_mode == "control-truncated" and len(self.positions) > CONTROL_LIMIT:
            raise ValueError("control-truncated clouds hold at most 5000 points")
        r = self.r
        if np.any(r > self.fingertip_radius + CALIBRATION_SLACK):
            raise ValueError("point beyond the undeformed fingertip surface")

    def __len__(self):
        return len(self.positions)

    @property
    def r(self):
        return np.linalg.norm(self.positions, axis=1)

    @property
    def deformation(self):
        return self.fingertip_radius - self.r

    def point(self, i):
        r = float(np.linalg.norm(self.positions[i]))
        label = UNDEFORMED if self.labels is None else int(self.labels[i])
        return TactilePoint(self.positions[i], r, self.fingertip_radius - r, label)

    def subset(self, idx, capture_mode=None):
        idx = np.asarray(idx)
        return TactileCloud(
            self.positions[idx], self.fingertip_radius,
            capture_mode or self.capture_mode, self.sensor_id,
            None if self.pixels is None else self.pixels[idx],
            None if self.labels is None else self.labels[idx])


def threshold_deformed(cloud, params):
    """Split point indices into (deformed, undeformed); deformation must exceed the threshold."""
    mask = cloud.deformation > params.deform_threshold
    return np.flatnonzero(mask), np.flatnonzero(~mask)


class Augmented(NamedTuple):
    indices: np.ndarray      # cloud indices fed to DBSCAN
    augmented: np.ndarray    # True where the point came from the undeformed sample


def augment_for_clustering(deformed, undeformed, params, rng):
    deformed = np.asarray(deformed, dtype=int)
    undeformed = np.asarray(undeformed, dtype=int)
    k = int(np.floor(params.augment_fraction * len(undeformed)))
    if k == 0:
        sample = np.empty(0, dtype=int)
    else:
        sample = np.sort(rng.choice(undeformed, size=k, replace=False))
    indices = np.concatenate([deformed, sample])
    flags = np.zeros(len(indices), dtype=bool)
    flags[len(deformed):] = True
    return Augmented(indices, flags)


def dbscan(points, eps, min_pts):
    """Density clustering; returns -1 for noise, 0.. for clusters.

    Neighbourhoods are closed balls that include the point itself. Cluster
    ids follow the lowest-index core point of each cluster, and a border
    point reachable from several clusters joins the lowest id, which is
    what the classic seed-in-index-order expansion produces.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    pairs = cKDTree(points).query_pairs(eps, output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    degree = np.bincount(i, minlength=n) + np.bincount(j, minlength=n) + 1
    core = degree >= min_pts
    if not core.any():
        return labels
    both = core[i] & core[j]
    graph = coo_matrix((np.ones(both.sum()), (i[both], j[both])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    # renumber components by their smallest core index
    core_idx = np.flatnonzero(core)
    first = np.full(comp.max() + 1, n)
    np.minimum.at(first, comp[core_idx], core_idx)
    used = np.unique(comp[core_idx])
    rank = np.empty(comp.max() + 1, dtype=int)
    rank[used[np.argsort(first[used])]] = np.arange(len(used))
    labels[core_idx] = rank[comp[core_idx]]
    # border points: smallest cluster id among adjacent cores
    border = np.full(n, n)
    for a, b in ((i, j), (j, i)):
        m = core[b] & ~core[a]
        np.minimum.at(border, a[m], labels[b[m]])
    hit = border < n
    labels[hit] = border[hit]
    return labels


def select_clusters(labels, augmented=None, max_clusters=MAX_CLUSTERS):
    """Index arrays of the kept clusters, largest first (ties: lower label first).

    Augmentation-flagged and noise points never count towards a cluster.
    """
    labels = np.asarray(labels)
    keep = labels >= 0
    if augmented is not None:
        keep &= ~np.asarray(augmented, dtype=bool)
    ids, counts = np.unique(labels[keep], return_counts=True)
    if len(ids) == 0:
        raise NoContact("no cluster survived segmentation")
    order = sorted(range(len(ids)), key=lambda i: (-counts[i], ids[i]))[:max_clusters]
    return [np.flatnonzero(keep & (labels == ids[i])) for i in order]


class ContactEstimate(NamedTuple):
    position: np.ndarray      # mm, fingertip frame
    deformed_radius: float    # mean r of the points used
    n_used: int


def object_contact_estimate(positions, fraction=0.30):
    """Mean of the ``fraction`` of points with the largest radius (least deformed)."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = len(positions)
    if n < 4:
        raise DegenerateCluster(f"cluster has {n} points, need at least 4")
    k = max(1, int(np.floor(fraction * n)))
    r = np.linalg.norm(positions, axis=1)
    top = np.argsort(-r, kind="stable")[:k]
    return ContactEstimate(positions[top].mean(axis=0), float(r[top].mean()), k)


def truncate_for_control(cloud, limit=CONTROL_LIMIT):
    """Uniform stride subsampling down to at most ``limit`` points."""
    n = len(cloud)
    if n <= limit:
        stride = 1
    else:
        stride = -(-n // limit)
    return cloud.subset(np.arange(0, n, stride), capture_mode="control-truncated")


@dataclass
class PerceptionResult:
    labels: np.ndarray                 # per cloud point: 0 undeformed, -1 noise, 1..4 cluster
    clusters: list                     # cloud index arrays, largest first
    contact: Optional[ContactEstimate]
    max_deformation: float
    n_deformed: int
    extra: dict = field(default_factory=dict)

    @property
    def primary(self):
        return self.clusters[0] if self.clusters else None


def perceive(cloud, params, rng, centroid_fraction=0.30):
    """threshold -> augment -> DBSCAN -> select -> contact estimate.

    A frame without surviving clusters yields an empty ``clusters`` list and
    no contact estimate instead of raising.
    """
    deformed, undeformed = threshold_deformed(cloud, params)
    labels = np.zeros(len(cloud), dtype=int)
    labels[deformed] = NOISE
    max_def = float(cloud.deformation.max()) if len(cloud) else 0.0
    if len(deformed) == 0:
        return PerceptionResult(labels, [], None, max_def, 0)
    aug = augment_for_clustering(deformed, undeformed, params, rng)
    raw = dbscan(cloud.positions[aug.indices], params.eps, params.min_pts)
    try:
        chosen = select_clusters(raw, aug.augmented)
    except NoContact:
        return PerceptionResult(labels, [], None, max_def, len(deformed))
    clusters = []
    for k, local in enumerate(chosen, start=1):
        idx = aug.indices[local]
        labels[idx] = k
        clusters.append(idx)
    contact = None
    if len(clusters[0]) >= 4:
        contact = object_contact_estimate(cloud.positions[clusters[0]], centroid_fraction)
    return PerceptionResult(labels, clusters, contact, max_def, len(deformed))


def label_frame(frame, params, rng, stride=4, centroid_fraction=0.30):
    """Fill ``frame.labels`` with DBSCAN cluster ids (1 = largest).

    Clustering runs on the pixel sub-grid with the given stride; each full
    resolution deformed pixel inherits the label of its sub-grid block.
    Returns the perception result on the sub-grid cloud.
    """
    from .frames import hemisphere_directions

    n = frame.resolution
    dirs, valid = hemisphere_directions(n)
    centres = np.arange(stride // 2, n, stride)
    sub_rows, sub_cols = np.meshgrid(centres, centres, indexing="ij")
    sub_valid = valid[sub_rows, sub_cols]
    rows, cols = sub_rows[sub_valid], sub_cols[sub_valid]
    cloud = TactileCloud(dirs[rows, cols] * frame.depth[rows, cols, None],
                         frame.fingertip_radius, "full", frame.sensor_id,
                         pixels=np.stack([rows, cols], axis=1))
    result = perceive(cloud, params, rng, centroid_fraction)
    block = np.zeros(sub_rows.shape, dtype=np.int8)
    block[sub_valid] = np.clip(result.labels, 0, None)
    up = np.repeat(np.repeat(block, stride, axis=0), stride, axis=1)[:n, :n]
    deformed = valid & (frame.deformation > params.deform_threshold)
    frame.labels = np.where(deformed, up, 0).astype(np.int8)
    return result
