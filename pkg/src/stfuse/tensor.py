"""Dense feature tensors and deterministic arithmetic helpers.

A feature map is a plain ``numpy`` array of shape ``(height, width, depth)``
with dtype float32, stored row-major with the channel axis innermost.  That
layout is load-bearing: the vectorisation used by the fusion module and the
flattening done by fully-connected layers both follow it, so oracle tests can
state exact element indices.

Accumulations (norms, dot products) run in float64 and results are stored
back as float32.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidValue, ShapeError

PROVENANCE_TAGS = (
    "fc6_spatial",
    "fc6_temporal",
    "softmax_spatial",
    "softmax_temporal",
    "bilinear",
    "concat",
)


def feature_map(values, copy=True):
    """Coerce ``values`` to a read-only float32 (h, w, d) feature map.

    Raises ShapeError for a rank other than 3 and InvalidValue for
    non-finite entries or an empty grid.
    """
    arr = np.array(values, dtype=np.float32, copy=copy)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"feature map must be rank 3, got rank {arr.ndim}")
    if arr.size == 0:
        raise InvalidValue("feature map must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidValue("feature map contains non-finite values")
    arr.flags.writeable = False
    return arr


def check_map(arr, depth=None):
    """Validate an existing array as a feature map, optionally pinning depth."""
    if not isinstance(arr, np.ndarray) or arr.ndim != 3:
        raise ShapeError("expected a (h, w, d) array")
    if depth is not None and arr.shape[2] != depth:
        raise ShapeError(f"expected depth {depth}, got {arr.shape[2]}")
    return arr


@dataclass(frozen=True)
class FeatureVector:
    """A flat float32 feature with a provenance tag.

    The tag records which stage produced the vector so that fusion
    operations can reject mismatched inputs.
    """

    data: np.ndarray
    provenance: str

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32).reshape(-1)
        if arr.size == 0:
            raise InvalidValue("feature vector must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise InvalidValue("feature vector contains non-finite values")
        if self.provenance not in PROVENANCE_TAGS:
            raise InvalidValue(f"unknown provenance tag {self.provenance!r}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __len__(self):
        return self.data.size


def l2_normalize(v):
    """Scale a vector to unit Euclidean norm.

    Accepts either a FeatureVector or an array-like and returns the same
    kind.  The all-zero vector is returned unchanged; max-pooled
    co-occurrences of all-zero activations are legal early in training and
    must not error.
    """
    if isinstance(v, FeatureVector):
        return FeatureVector(l2_normalize(v.data), v.provenance)
    arr = np.asarray(v, dtype=np.float32)
    if arr.size == 0:
        raise InvalidValue("cannot normalize an empty vector")
    if not np.all(np.isfinite(arr)):
        raise InvalidValue("cannot normalize non-finite values")
    norm = float(np.sqrt(np.sum(np.square(arr, dtype=np.float64))))
    if norm == 0.0:
        return arr.copy()
    return (arr / norm).astype(np.float32)
