"""Orientation-normalised sample extraction from labelled tactile frames.

Each labelled cluster gives one sample: the deformation-weighted PCA of its
pixels fixes a centre and principal angle, and a 300x300 window around the
centre is resampled so the principal axis lies along the image x axis.
"""
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.ndimage import map_coordinates

from ..errors import DegenerateCluster

SAMPLE_SIZE = 300
CHANNELS = ("R", "G", "B", "depth", "label")
ISOTROPY_RATIO = 1.05
SKEW_MIN = 0.25         # weaker skewness orients the axis by the pole instead
ROUND_RATIO = 1.25      # eigenvalue ratios below this are treated as round for cropping
BACKGROUND_RGB = 0.5
PLANE_CLASS = 22
TWO_OBJECT_CLASS = 21


class PcaPose(NamedTuple):
    center: np.ndarray     # (x, y) = (column, row)
    angle: float           # first principal axis, [0, pi)
    isotropic: bool


@dataclass
class ClassSample:
    tensor: np.ndarray     # (300, 300, 5) float32
    class_id: int
    pca_center: tuple
    pca_angle: float       # crop angle in [0, 2pi): the PCA axis, possibly reversed
    features: Optional[np.ndarray] = None   # cached feature vector
    origin: Optional[dict] = None           # provenance (press, frame) for manifests

    def __post_init__(self):
        if not 1 <= int(self.class_id) <= 22:
            raise ValueError("class_id must lie in 1..22")
        self.class_id = int(self.class_id)
        if self.tensor is not None and not np.all(np.isfinite(self.tensor)):
            raise ValueError("sample tensor must be finite")


def pca_pose(pixels, weights=None, isotropy_ratio=ISOTROPY_RATIO):
    """Weighted centroid and principal-axis angle of image points given as (x, y).

    Angles are measured from +x toward +y (image rows grow downward, so this
    is clockwise on screen) and folded into [0, pi). Near-round clusters,
    eigenvalue ratio below ``isotropy_ratio``, get angle 0 and the flag set.
    """
    pts = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(np.unique(pts, axis=0)) < 2:
        raise DegenerateCluster("PCA needs at least two distinct pixels")
    w = np.ones(len(pts)) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("PCA weights must be nonnegative with a positive sum")
    w = w / w.sum()
    center = w @ pts
    d = pts - center
    cov = (d * w[:, None]).T @ d
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] <= 0 or evals[0] > 0 and evals[1] / evals[0] < isotropy_ratio:
        return PcaPose(center, 0.0, True)
    v = evecs[:, 1]
    angle = float(np.arctan2(v[1], v[0]) % np.pi)
    if angle >= np.pi:      # float rounding of the fold
        angle = 0.0
    return PcaPose(center, angle, False)


def crop_angle(pixels, weights, pose, frame_shape, skew_min=SKEW_MIN, round_ratio=ROUND_RATIO):
    """Angle the crop is rotated by: the PCA axis, pointed at one of its two ends.

    PCA fixes the axis only up to sign, so a frame rotation crossing the
    fold at 0 / pi would turn the sample by 180 degrees. The axis points
    along the long tail of the weighted projection (from a screw head down
    the shaft) when the skew is clear, otherwise away from the sensor pole
    at the frame centre.
    Round patches have no usable axis at all and are oriented along the
    pole direction. Every cue turns with the frame.
    """
    pts = np.asarray(pixels, dtype=float).reshape(-1, 2)
    w = np.ones(len(pts)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    h, wd = frame_shape[:2]
    away = pose.center - np.array([(wd - 1) / 2.0, (h - 1) / 2.0])
    d = pts - pose.center
    evals = np.linalg.eigvalsh((d * w[:, None]).T @ d)
    if pose.isotropic or evals[1] < round_ratio * evals[0]:
        if np.hypot(*away) < 1.0:
            return pose.angle
        return float(np.arctan2(away[1], away[0]) % (2 * np.pi))
    v = np.array([np.cos(pose.angle), np.sin(pose.angle)])
    t = d @ v
    skew = (w @ t ** 3) / (w @ t ** 2) ** 1.5
    flip = skew < 0 if abs(skew) >= skew_min else away @ v < 0
    return pose.angle + np.pi if flip else pose.angle


def crop_rotate(frame, center, angle, out_size=SAMPLE_SIZE, label_id=None):
    """Five-channel window around ``center`` with the axis at ``angle`` mapped onto +x.

    Channel order R, G, B, depth / R, own-cluster mask. RGB and depth are
    bilinear, the label plane nearest-neighbour; outside the frame the
    undeformed background is used. ``label_id`` None keeps every labelled pixel.
    """
    cx, cy = float(center[0]), float(center[1])
    h, w = frame.depth.shape
    if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
        raise ValueError("crop centre must lie inside the frame")
    off = np.arange(out_size) - (out_size - 1) / 2.0
    U, V = np.meshgrid(off, off)
    c, s = np.cos(angle), np.sin(angle)
    xs = cx + c * U - s * V
    ys = cy + s * U + c * V
    coords = np.stack([ys.ravel(), xs.ravel()])
    out = np.empty((out_size, out_size, 5), dtype=np.float32)
    rgb = frame.rgb if frame.rgb is not None else np.full((h, w, 3), BACKGROUND_RGB)
    for ch in range(3):
        out[..., ch] = map_coordinates(rgb[..., ch], coords, order=1, mode="constant",
                                       cval=BACKGROUND_RGB).reshape(out_size, out_size)
    R = frame.fingertip_radius
    out[..., 3] = map_coordinates(frame.depth / R, coords, order=1, mode="constant",
                                  cval=1.0).reshape(out_size, out_size)
    lab = map_coordinates(frame.labels.astype(float), coords, order=0, mode="constant",
                          cval=0.0).reshape(out_size, out_size)
    out[..., 4] = (lab > 0) if label_id is None else (lab == label_id)
    return out


def cluster_order(labels):
    """Label ids present in the plane, largest cluster first (lower id on ties)."""
    ids, counts = np.unique(labels[labels > 0], return_counts=True)
    order = np.lexsort((ids, -counts))
    return [int(i) for i in ids[order]]


def extract_samples(frame, class_id=PLANE_CLASS, out_size=SAMPLE_SIZE):
    """One sample per labelled cluster (at most four), largest first."""
    samples = []
    deformation = np.clip(frame.deformation, 0.0, None)
    for lid in cluster_order(frame.labels)[:4]:
        rows, cols = np.nonzero(frame.labels == lid)
        wts = deformation[rows, cols]
        if wts.sum() <= 0:
            wts = None
        pts = np.stack([cols, rows], axis=1)
        try:
            pose = pca_pose(pts, wts)
        except DegenerateCluster:
            continue
        angle = crop_angle(pts, wts, pose, frame.depth.shape)
        tensor = crop_rotate(frame, pose.center, angle, out_size, label_id=lid)
        samples.append(ClassSample(tensor, class_id, tuple(float(c) for c in pose.center), angle))
    return samples
