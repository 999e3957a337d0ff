"""Simulated press datasets.

Each press gets its own child seed, so the dataset is identical whatever
the worker count.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..perception import DbscanParams, label_frame
from ..simworld.presses import PressConfig, simulate_press
from ..simworld.shapes import shape_for_class
from .dataset import Dataset
from .model import pooled_features
from .preprocess import (TWO_OBJECT_CLASS, ClassSample, crop_angle, crop_rotate,
                         extract_samples, pca_pose)

# spheres, capsules and screws spanning the 5-25 mm range
DEFAULT_CLASSES = (1, 3, 6, 9, 10, 12, 14, 15, 17, 19)


@dataclass
class DatasetConfig:
    classes: tuple = DEFAULT_CLASSES
    presses_per_class: int = 1
    press: PressConfig = field(default_factory=PressConfig)
    two_object_presses: int = 0        # presses of class-21 pairs drawn from ``classes``
    seed: int = 0
    test_fraction: float = 0.12
    keep_tensors: bool = True


def frame_sample(frame, class_id, rng, dbscan_params=DbscanParams()):
    """Label a press frame and cut the training sample from it.

    Single-object presses use the largest cluster. Two-object presses are
    oriented and masked on all labelled pixels together, which is how a
    merged pair looks once it is held between the fingers.
    """
    label_frame(frame, dbscan_params, rng)
    if class_id != TWO_OBJECT_CLASS:
        samples = extract_samples(frame, class_id)
        return samples[0] if samples else None
    rows, cols = np.nonzero(frame.labels > 0)
    if len(rows) < 2:
        return None
    w = np.clip(frame.deformation[rows, cols], 0.0, None)
    w = w if w.sum() > 0 else None
    pts = np.stack([cols, rows], axis=1)
    pose = pca_pose(pts, w)
    angle = crop_angle(pts, w, pose, frame.depth.shape)
    tensor = crop_rotate(frame, pose.center, angle, label_id=None)
    return ClassSample(tensor, class_id, tuple(float(v) for v in pose.center), angle)


def _run_press(job):
    seed, class_ids, press_cfg, keep, tag = job
    rng = np.random.default_rng(seed)
    shapes = [shape_for_class(c) for c in class_ids]
    out = []
    for k, pf in enumerate(simulate_press(shapes, class_ids, rng, press_cfg)):
        s = frame_sample(pf.frame, pf.class_id, rng)
        if s is None:
            continue
        s.features = pooled_features(s.tensor)
        s.origin = {"press": tag, "frame": k}
        if not keep:
            s.tensor = None
        out.append(s)
    return out


def press_jobs(cfg):
    """(seed, class ids, press config, keep tensors, tag) per press in a fixed order."""
    root = np.random.SeedSequence(cfg.seed)
    n_single = len(cfg.classes) * cfg.presses_per_class
    children = root.spawn(n_single + cfg.two_object_presses + 1)
    jobs = []
    for ci, c in enumerate(cfg.classes):
        for p in range(cfg.presses_per_class):
            i = ci * cfg.presses_per_class + p
            jobs.append((children[i], [c], cfg.press, cfg.keep_tensors, f"c{c:02d}p{p:03d}"))
    pick = np.random.default_rng(children[-1])
    for p in range(cfg.two_object_presses):
        pair = [int(v) for v in pick.choice(cfg.classes, size=2)]
        jobs.append((children[n_single + p], pair, cfg.press, cfg.keep_tensors, f"pair{p:03d}"))
    return jobs


def build_dataset(cfg=DatasetConfig(), workers=1):
    jobs = press_jobs(cfg)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_press, jobs, chunksize=1))
    else:
        results = [_run_press(j) for j in jobs]
    samples = [s for group in results for s in group]
    ds = Dataset(samples, seed=cfg.seed)
    return ds.stratified_split(cfg.test_fraction)


def single_frame_presses(cfg):
    """Config for presses that each contribute one frame at a random depth."""
    return replace(cfg, press=replace(cfg.press, frames=1))
