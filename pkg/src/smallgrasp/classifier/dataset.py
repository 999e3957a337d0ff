"""Sample collections, the stratified split and the on-disk manifest."""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .preprocess import ClassSample

TEST_FRACTION = 0.12
SAMPLE_MAGIC = "SGSAMPLE"
MANIFEST_SCHEMA = "smallgrasp.dataset/1"


@dataclass
class Dataset:
    samples: list
    split: list = field(default_factory=list)     # "train" / "test" per sample
    seed: int = 0
    test_fraction: float = TEST_FRACTION

    @property
    def per_class_counts(self):
        counts = np.zeros(22, dtype=int)
        for s in self.samples:
            counts[s.class_id - 1] += 1
        return counts

    def stratified_split(self, test_fraction=TEST_FRACTION, seed=None):
        """Per class, round(fraction * n) samples (at least one) go to the test side."""
        if seed is not None:
            self.seed = int(seed)
        self.test_fraction = float(test_fraction)
        rng = np.random.default_rng(self.seed)
        labels = np.array([s.class_id for s in self.samples])
        split = np.array(["train"] * len(self.samples), dtype=object)
        for c in range(1, 23):
            idx = np.flatnonzero(labels == c)
            if len(idx) == 0:
                continue
            n_test = max(1, int(round(test_fraction * len(idx))))
            split[rng.permutation(idx)[:n_test]] = "test"
        self.split = list(split)
        return self

    def _pick(self, name):
        if len(self.split) != len(self.samples):
            raise ValueError("dataset has no split; call stratified_split first")
        return [s for s, part in zip(self.samples, self.split) if part == name]

    def train_samples(self):
        return self._pick("train")

    def test_samples(self):
        return self._pick("test")


def save_sample(sample, path):
    with open(path, "wb") as fh:
        np.savez_compressed(fh, magic=np.array(SAMPLE_MAGIC), tensor=sample.tensor,
                            class_id=np.array(sample.class_id),
                            pca_center=np.asarray(sample.pca_center, dtype=float),
                            pca_angle=np.array(sample.pca_angle))


def load_sample(path):
    with np.load(path, allow_pickle=False) as z:
        if "magic" not in z or str(z["magic"]) != SAMPLE_MAGIC:
            raise FormatError(f"{path}: not a sample tensor file")
        return ClassSample(z["tensor"].copy(), int(z["class_id"]), tuple(z["pca_center"]),
                           float(z["pca_angle"]))


def save_dataset(dataset, root, extra=None):
    """Write sample sidecars under ``root/samples`` and ``root/manifest.json``."""
    root = Path(root)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (s, part) in enumerate(zip(dataset.samples, dataset.split)):
        rel = f"samples/{i:05d}_c{s.class_id:02d}.npz"
        save_sample(s, root / rel)
        entry = {"path": rel, "class_id": s.class_id, "split": part}
        entry.update(getattr(s, "origin", None) or {})
        entries.append(entry)
    manifest = {"schema": MANIFEST_SCHEMA, "seed": dataset.seed,
                "test_fraction": dataset.test_fraction,
                "per_class_counts": dataset.per_class_counts.tolist(),
                "samples": entries}
    if extra:
        manifest.update(extra)
    text = json.dumps(manifest, indent=1, sort_keys=True) + "\n"
    (root / "manifest.json").write_text(text)
    return manifest


def load_dataset(root):
    root = Path(root)
    path = root / "manifest.json" if root.is_dir() else root
    manifest = json.loads(path.read_text())
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise FormatError(f"{path}: not a dataset manifest")
    samples = []
    for e in manifest["samples"]:
        s = load_sample(path.parent / e["path"])
        if s.class_id != e["class_id"]:
            raise FormatError(f"{e['path']}: class id disagrees with the manifest")
        samples.append(s)
    ds = Dataset(samples, [e["split"] for e in manifest["samples"]], manifest["seed"],
                 manifest["test_fraction"])
    if ds.per_class_counts.tolist() != manifest["per_class_counts"]:
        raise FormatError(f"{path}: per-class counts disagree with the sample list")
    return ds, manifest
