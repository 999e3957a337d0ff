"""Confusion matrices and per-class metrics."""
import json
from dataclasses import dataclass, field

import numpy as np

from .model import N_CLASSES, predict

REPORT_SCHEMA = "smallgrasp.confusion/1"


@dataclass
class ConfusionMatrix:
    matrix: np.ndarray                      # rows true class, columns predicted, ids 1..22
    log: list = field(default_factory=list)  # (true, predicted) per sample

    @classmethod
    def from_pairs(cls, pairs):
        m = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
        for t, p in pairs:
            m[t - 1, p - 1] += 1
        return cls(m, [(int(t), int(p)) for t, p in pairs])

    @property
    def total(self):
        return int(self.matrix.sum())

    @property
    def accuracy(self):
        return float(np.trace(self.matrix) / self.total) if self.total else float("nan")

    def precision(self):
        col = self.matrix.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(col > 0, np.diag(self.matrix) / np.maximum(col, 1), np.nan)

    def recall(self):
        row = self.matrix.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(row > 0, np.diag(self.matrix) / np.maximum(row, 1), np.nan)

    def to_dict(self):
        nan_to_none = lambda a: [None if np.isnan(v) else round(float(v), 6) for v in a]
        return {"schema": REPORT_SCHEMA, "classes": list(range(1, N_CLASSES + 1)),
                "matrix": self.matrix.tolist(), "total": self.total,
                "accuracy": round(self.accuracy, 6) if self.total else None,
                "precision": nan_to_none(self.precision()), "recall": nan_to_none(self.recall()),
                "log": [list(p) for p in self.log]}

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError("not a confusion report")
        return cls(np.array(d["matrix"], dtype=int), [tuple(p) for p in d.get("log", [])])

    def to_text(self, classes=None):
        """Fixed-width table, rows true class, columns predicted; recall per row."""
        if classes is None:
            used = (self.matrix.sum(axis=0) + self.matrix.sum(axis=1)) > 0
            classes = [c + 1 for c in np.flatnonzero(used)] or list(range(1, N_CLASSES + 1))
        idx = [c - 1 for c in classes]
        lines = ["# confusion matrix: rows = true label, columns = predicted label",
                 "true\\pred " + " ".join(f"{c:>5d}" for c in classes) + "  recall"]
        rec = self.recall()
        for i, c in zip(idx, classes):
            r = "   -" if np.isnan(rec[i]) else f"{rec[i]:.3f}"
            lines.append(f"{c:>9d} " + " ".join(f"{self.matrix[i, j]:>5d}" for j in idx)
                         + f"  {r}")
        lines.append(f"# samples {self.total}  accuracy {self.accuracy:.4f}")
        return "\n".join(lines) + "\n"


def evaluate(model, samples):
    """Confusion matrix over ``samples`` (a list, or a Dataset's test split)."""
    samples = list(samples.test_samples() if hasattr(samples, "test_samples") else samples)
    pairs = [(s.class_id, predict(model, s)[0]) for s in samples]
    return ConfusionMatrix.from_pairs(pairs)


def write_report(cm, path, extra=None):
    d = cm.to_dict()
    if extra:
        d.update(extra)
    with open(path, "w") as fh:
        json.dump(d, fh, indent=1, sort_keys=True)
        fh.write("\n")
