"""Pluggable classifier interface and the reference pooled-feature model.

Reference model: multinomial logistic regression over a fixed feature map.
The map pools every channel of the 300x300x5 sample on a 1x1, 2x2 and 4x4
grid (mean and variance per cell, 210 numbers) and appends a 16-bin
histogram of the deformation inside the sample's own cluster, normalised
by the window area so patch size survives.

Training minimises class-weighted cross-entropy. With weights w_c = N / (C
n_c) and the loss normalised by the total weight, every class contributes
equally regardless of how many samples it has.
"""
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from ..errors import EmptyDataset, FormatError, ModelSampleMismatch, SingleClassDataset
from .preprocess import SAMPLE_SIZE

N_CLASSES = 22
LEVELS = (1, 2, 4)
HIST_BINS = 16
HIST_MAX = 20.0 / 15.5      # deformation cap over the fingertip radius
MODEL_MAGIC = "SGCLASSIFIER"
MODEL_VERSION = 1
TENSOR_SHAPE = (SAMPLE_SIZE, SAMPLE_SIZE, 5)


def feature_length(levels=LEVELS, channels=5, bins=HIST_BINS):
    return channels * 2 * sum(l * l for l in levels) + bins


def pooled_features(tensor, levels=LEVELS, bins=HIST_BINS):
    t = np.asarray(tensor, dtype=np.float64)
    feats = []
    for level in levels:
        for rows in np.array_split(t, level, axis=0):
            for cell in np.array_split(rows, level, axis=1):
                flat = cell.reshape(-1, t.shape[2])
                feats.append(flat.mean(axis=0))
                feats.append(flat.var(axis=0))
    mask = t[..., 4] > 0.5
    deform = 1.0 - t[..., 3][mask]
    hist, _ = np.histogram(deform, bins=bins, range=(0.0, HIST_MAX))
    feats.append(hist / float(t.shape[0] * t.shape[1]))
    return np.concatenate(feats)


def sample_features(sample, levels=LEVELS, bins=HIST_BINS):
    """Features of a ClassSample (cached on the sample) or a bare tensor."""
    if isinstance(sample, np.ndarray):
        return pooled_features(sample, levels, bins)
    cached = getattr(sample, "features", None)
    if cached is not None:
        return cached
    return pooled_features(sample.tensor, levels, bins)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    return np.exp(z - logsumexp(z, axis=-1, keepdims=True))


def class_weights(labels, n_classes=N_CLASSES):
    """Inverse-frequency weights N / (C n_c) for classes 1..n_classes (0 when absent)."""
    labels = np.asarray(labels, dtype=int)
    counts = np.bincount(labels - 1, minlength=n_classes).astype(float)
    present = counts > 0
    w = np.zeros(n_classes)
    w[present] = len(labels) / (present.sum() * counts[present])
    return w


@dataclass
class TrainConfig:
    l2: float = 1e-3        # keeps the optimum finite on separable data
    gtol: float = 1e-5
    max_iter: int = 5000
    seed: int = 0

    def to_dict(self):
        return {"l2": self.l2, "gtol": self.gtol, "max_iter": self.max_iter, "seed": self.seed}


@dataclass
class ClassifierModel:
    kind: str
    parameters: bytes
    class_weights: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.class_weights = np.asarray(self.class_weights, dtype=float)
        if self.class_weights.shape != (N_CLASSES,):
            raise ValueError(f"class_weights must hold {N_CLASSES} entries")
        if self.kind not in BACKENDS:
            raise ValueError(f"unknown classifier kind {self.kind!r}")
        self._decoded = None

    def decoded(self):
        if self._decoded is None:
            self._decoded = BACKENDS[self.kind].decode(self.parameters)
        return self._decoded


BACKENDS = {}


def register_backend(cls):
    """Make a backend available by its ``kind``; it needs fit, decode and logits."""
    BACKENDS[cls.kind] = cls
    return cls


def _pack(arrays, meta):
    buf = io.BytesIO()
    np.savez(buf, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return buf.getvalue()


def _unpack(blob):
    with np.load(io.BytesIO(blob), allow_pickle=False) as z:
        arrays = {k: z[k].copy() for k in z.files if k != "meta"}
        meta = json.loads(str(z["meta"]))
    return arrays, meta


def weighted_ce(theta, Z, y, s, l2):
    """Class-weighted cross-entropy with L2 on the weights; returns (loss, gradient)."""
    n, f = Z.shape
    W = theta[:N_CLASSES * f].reshape(N_CLASSES, f)
    b = theta[N_CLASSES * f:]
    logits = Z @ W.T + b
    lse = logsumexp(logits, axis=1)
    loss = float(s @ (lse - logits[np.arange(n), y])) + 0.5 * l2 * float(np.sum(W * W))
    P = np.exp(logits - lse[:, None])
    P[np.arange(n), y] -= 1.0
    P *= s[:, None]
    gW = P.T @ Z + l2 * W
    gb = P.sum(axis=0)
    return loss, np.concatenate([gW.ravel(), gb])


@register_backend
class PooledLogReg:
    kind = "pooled-logreg"

    @staticmethod
    def fit(X, labels, weights, config):
        y = np.asarray(labels, dtype=int) - 1
        s = weights[y]
        s = s / s.sum()
        mu = s @ X
        sigma = np.sqrt(s @ (X - mu) ** 2)
        sigma[sigma < 1e-8] = 1.0
        Z = (X - mu) / sigma
        theta0 = np.zeros(N_CLASSES * (X.shape[1] + 1))
        res = minimize(weighted_ce, theta0, args=(Z, y, s, config.l2), jac=True,
                       method="L-BFGS-B",
                       options={"gtol": config.gtol, "ftol": 1e-15, "maxiter": config.max_iter,
                                "maxcor": 20})
        _, grad = weighted_ce(res.x, Z, y, s, config.l2)
        f = X.shape[1]
        arrays = {"W": res.x[:N_CLASSES * f].reshape(N_CLASSES, f), "b": res.x[N_CLASSES * f:],
                  "mu": mu, "sigma": sigma}
        info = {"iterations": int(res.nit), "loss": float(res.fun),
                "grad_norm": float(np.linalg.norm(grad)), "grad_max": float(np.abs(grad).max())}
        return arrays, info

    @staticmethod
    def decode(blob):
        return _unpack(blob)

    @staticmethod
    def logits(arrays, x):
        return arrays["W"] @ ((x - arrays["mu"]) / arrays["sigma"]) + arrays["b"]


def _stack_features(samples):
    return np.stack([sample_features(s) for s in samples])


def train(samples, config=TrainConfig(), kind=PooledLogReg.kind):
    """Fit a classifier on ``samples`` (a Dataset's training split or a plain list)."""
    samples = list(samples.train_samples() if hasattr(samples, "train_samples") else samples)
    if not samples:
        raise EmptyDataset("no training samples")
    labels = np.array([s.class_id for s in samples])
    if len(np.unique(labels)) < 2:
        raise SingleClassDataset("training needs at least two classes")
    weights = class_weights(labels)
    backend = BACKENDS[kind]
    arrays, info = backend.fit(_stack_features(samples), labels, weights, config)
    meta = {"tensor_shape": list(TENSOR_SHAPE), "levels": list(LEVELS), "bins": HIST_BINS,
            "feature_length": feature_length(), "train_config": config.to_dict(),
            "n_train": len(samples), "fit": info}
    return ClassifierModel(kind, _pack(arrays, meta), weights, meta)


def uniform_model():
    f = feature_length()
    arrays = {"W": np.zeros((N_CLASSES, f)), "b": np.zeros(N_CLASSES),
              "mu": np.zeros(f), "sigma": np.ones(f)}
    meta = {"tensor_shape": list(TENSOR_SHAPE), "levels": list(LEVELS), "bins": HIST_BINS,
            "feature_length": f}
    return ClassifierModel(PooledLogReg.kind, _pack(arrays, meta), np.zeros(N_CLASSES), meta)


def predict(model, sample):
    """(class_id, confidences over classes 1..22); ties go to the lower class id."""
    arrays, meta = model.decoded()
    tensor = sample if isinstance(sample, np.ndarray) else getattr(sample, "tensor", None)
    if tensor is not None:
        if tuple(np.shape(tensor)) != tuple(meta["tensor_shape"]):
            raise ModelSampleMismatch(
                f"sample shape {np.shape(tensor)} != model input {tuple(meta['tensor_shape'])}")
        x = pooled_features(tensor)
    else:
        x = np.asarray(sample.features, dtype=float)
        if x.shape != (meta["feature_length"],):
            raise ModelSampleMismatch("cached features do not match the model")
    p = softmax(BACKENDS[model.kind].logits(arrays, x))
    return int(np.argmax(p)) + 1, p


def save_model(model, path):
    with open(path, "wb") as fh:
        np.savez(fh, magic=np.array(MODEL_MAGIC), version=np.array(MODEL_VERSION),
                 kind=np.array(model.kind), class_weights=model.class_weights,
                 parameters=np.frombuffer(model.parameters, dtype=np.uint8),
                 meta=np.array(json.dumps(model.meta, sort_keys=True)))


def load_model(path):
    with np.load(path, allow_pickle=False) as z:
        if "magic" not in z or str(z["magic"]) != MODEL_MAGIC:
            raise FormatError(f"{path}: not a classifier model")
        if int(z["version"]) != MODEL_VERSION:
            raise FormatError(f"{path}: unsupported model version")
        return ClassifierModel(str(z["kind"]), z["parameters"].tobytes(),
                               z["class_weights"].copy(), json.loads(str(z["meta"])))
