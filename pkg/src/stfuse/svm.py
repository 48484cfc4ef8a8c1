"""Multi-class linear SVM (one-vs-rest) over fused feature vectors.

Each class gets an independent binary hinge-loss + L2 problem solved by
deterministic epoch-wise subgradient descent on the full training set with
the usual 1/(lambda * t) step schedule.  A halving backtrack on each epoch's
step keeps the regularised objective non-increasing, so training traces are
monotone and testable.  Identical inputs, seed and hyperparameters produce a
bitwise-identical model.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabels, FormatError, ShapeError
from .tensor import FeatureVector
from . import stwn


@dataclass
class LinearModel:
    weights: np.ndarray  # (num_classes, dim) float32
    bias: np.ndarray  # (num_classes,) float32
    lam: float

    @property
    def num_classes(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.weights.shape[1]


def _as_matrix(features):
    rows = []
    for f in features:
        arr = f.data if isinstance(f, FeatureVector) else np.asarray(f, dtype=np.float32)
        rows.append(np.asarray(arr, dtype=np.float64).reshape(-1))
    lengths = {r.size for r in rows}
    if len(lengths) != 1:
        raise ShapeError(f"feature lengths are not uniform: {sorted(lengths)}")
    return np.stack(rows)


def _objective(w, b, x, y, lam):
    margins = np.maximum(0.0, 1.0 - y * (x @ w + b))
    return 0.5 * lam * float(w @ w) + float(margins.mean())


def _train_binary(x, y, lam, epochs):
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    obj = _objective(w, b, x, y, lam)
    for t in range(1, epochs + 1):
        active = (1.0 - y * (x @ w + b)) > 0.0
        gw = lam * w - (x[active] * y[active, None]).sum(axis=0) / n
        gb = -float(y[active].sum()) / n
        step = 1.0 / (lam * t)
        # halve until the full-set objective does not increase
        for _ in range(60):
            w2 = w - step * gw
            b2 = b - step * gb
            obj2 = _objective(w2, b2, x, y, lam)
            if obj2 <= obj + 1e-12:
                w, b, obj = w2, b2, obj2
                break
            step *= 0.5
    return w, b


def train_svm(features, labels, lam=1e-4, epochs=100, seed=0, num_classes=None, shuffle=False):
    """Fit one-vs-rest linear classifiers by hinge-loss subgradient descent.

    ``seed`` only matters with ``shuffle=True``, where it permutes the
    per-epoch accumulation order; the default full-batch path is order
    independent up to float summation.
    """
    x = _as_matrix(features)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (x.shape[0],):
        raise ShapeError(f"{x.shape[0]} features but {y.size} labels")
    present = np.unique(y)
    if present.size < 2:
        raise DegenerateLabels(f"need >= 2 classes, got {present.size}")
    if lam <= 0:
        raise ShapeError("lambda must be positive")
    if num_classes is None:
        num_classes = int(present.max()) + 1
    rng = np.random.default_rng(seed)
    weights = np.zeros((num_classes, x.shape[1]), dtype=np.float32)
    bias = np.zeros(num_classes, dtype=np.float32)
    for c in range(num_classes):
        xc, yc = x, np.where(y == c, 1.0, -1.0)
        if shuffle:
            order = rng.permutation(x.shape[0])
            xc, yc = xc[order], yc[order]
        w, b = _train_binary(xc, yc, lam, epochs)
        weights[c] = w.astype(np.float32)
        bias[c] = np.float32(b)
    return LinearModel(weights, bias, float(lam))


def decision_scores(model, feature):
    arr = feature.data if isinstance(feature, FeatureVector) else np.asarray(feature)
    arr = np.asarray(arr, dtype=np.float64).reshape(-1)
    if arr.size != model.dim:
        raise ShapeError(f"feature length {arr.size} != model dim {model.dim}")
    return model.weights.astype(np.float64) @ arr + model.bias.astype(np.float64)


def predict(model, feature):
    """Return (argmax class, score vector); ties break to the lowest index."""
    scores = decision_scores(model, feature)
    return int(np.argmax(scores)), scores.astype(np.float32)


def save_model(model, path):
    w = stwn.new_container(stwn.KIND_SVM)
    w.u32(model.num_classes)
    w.u32(model.dim)
    w.f64(model.lam)
    w.tensor(model.weights)
    w.tensor(model.bias)
    with open(path, "wb") as f:
        f.write(w.getvalue())


def load_model(path):
    r = stwn.open_container(path, stwn.KIND_SVM)
    c = r.u32()
    d = r.u32()
    lam = r.f64()
    weights = r.tensor()
    bias = r.tensor()
    r.done()
    if weights.shape != (c, d) or bias.shape != (c,):
        raise FormatError(f"{path}: tensor shapes disagree with header")
    return LinearModel(weights, bias, lam)
