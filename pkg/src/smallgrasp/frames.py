"""Tactile frames and their on-disk container.

Container layout (numpy ``.npz``, uncompressed arrays):

    magic        "SGTACTFRAME"
    version      1
    depth        (H, W) float64, radial distance r in mm per pixel
    rgb          (H, W, 3) float32 in [0, 1]   (optional)
    labels       (H, W) int8 cluster ids 0..4  (optional)
    fingertip_radius, timestamp, sensor_pose (4x4), sensor_id
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import FormatError
from .geometry import Pose

FRAME_MAGIC = "SGTACTFRAME"
FRAME_VERSION = 1


@lru_cache(maxsize=8)
def hemisphere_directions(resolution):
    """Unit fingertip-frame ray per pixel (equidistant azimuthal map) and validity mask.

    Pixel column maps to local +x, row to local +y; the image centre is the
    pole (+z) and the inscribed circle is the equator. The returned arrays
    are shared and read-only.
    """
    c = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    u, v = np.meshgrid(c, c)  # u along columns, v along rows
    rho = np.hypot(u, v)
    valid = rho <= 1.0
    polar = np.clip(rho, 0.0, 1.0) * (np.pi / 2)
    az = np.arctan2(v, u)
    dirs = np.stack([np.sin(polar) * np.cos(az),
                     np.sin(polar) * np.sin(az),
                     np.cos(polar)], axis=-1)
    dirs.flags.writeable = False
    valid.flags.writeable = False
    return dirs, valid


def pixel_arc_mm(resolution, fingertip_radius):
    """Surface arc length spanned by one pixel at the undeformed radius."""
    return fingertip_radius * (np.pi / 2) / (resolution / 2)


@dataclass
class TactileFrame:
    depth: np.ndarray
    fingertip_radius: float
    rgb: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    sensor_pose: Pose = field(default_factory=Pose.identity)
    timestamp: float = 0.0
    sensor_id: str = "right"

    def __post_init__(self):
        h, w = self.depth.shape
        if self.rgb is not None and self.rgb.shape != (h, w, 3):
            raise ValueError("rgb plane must match depth dimensions")
        if self.labels is None:
            self.labels = np.zeros((h, w), dtype=np.int8)
        if self.labels.shape != (h, w):
            raise ValueError("label plane must match depth dimensions")
        if self.labels.size and (self.labels.max() > 4 or self.labels.min() < 0):
            raise ValueError("label ids must lie in 0..4")

    @property
    def resolution(self):
        return self.depth.shape[0]

    @property
    def deformation(self):
        return self.fingertip_radius - self.depth

    def cloud(self):
        from .perception import TactileCloud
        dirs, valid = hemisphere_directions(self.resolution)
        rows, cols = np.nonzero(valid)
        pos = dirs[rows, cols] * self.depth[rows, cols, None]
        return TactileCloud(pos, self.fingertip_radius, "full", self.sensor_id,
                            pixels=np.stack([rows, cols], axis=1))


def save_frame(frame, path):
    arrays = {
        "magic": np.array(FRAME_MAGIC),
        "version": np.array(FRAME_VERSION),
        "depth": frame.depth.astype(np.float64),
        "labels": frame.labels.astype(np.int8),
        "fingertip_radius": np.array(frame.fingertip_radius),
        "timestamp": np.array(frame.timestamp),
        "sensor_pose": frame.sensor_pose.matrix(),
        "sensor_id": np.array(frame.sensor_id),
    }
    if frame.rgb is not None:
        arrays["rgb"] = frame.rgb.astype(np.float32)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_frame(path):
    with np.load(path, allow_pickle=False) as z:
        if "magic" not in z or str(z["magic"]) != FRAME_MAGIC:
            raise FormatError(f"{path}: not a tactile frame container")
        if int(z["version"]) != FRAME_VERSION:
            raise FormatError(f"{path}: unsupported frame version {int(z['version'])}")
        return TactileFrame(
            depth=z["depth"].copy(),
            fingertip_radius=float(z["fingertip_radius"]),
            rgb=z["rgb"].astype(np.float64) if "rgb" in z else None,
            labels=z["labels"].copy(),
            sensor_pose=Pose.from_matrix(z["sensor_pose"]),
            timestamp=float(z["timestamp"]),
            sensor_id=str(z["sensor_id"]),
        )


def direction_to_pixel(direction, resolution):
    """(row, col) image position of a fingertip-frame direction; inverse of the hemisphere map."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    rho = np.arccos(np.clip(d[2], -1.0, 1.0)) / (np.pi / 2)
    az = np.arctan2(d[1], d[0])
    u, v = rho * np.cos(az), rho * np.sin(az)
    return (v + 1.0) / 2.0 * resolution - 0.5, (u + 1.0) / 2.0 * resolution - 0.5
