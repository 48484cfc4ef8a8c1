"""Fusion operators joining the appearance and motion streams.

Three families:

* late fusion: concatenate the two softmax outputs;
* early fusion: concatenate the two fc6 features;
* bilinear co-occurrence: at every grid location take the outer product of
  the two streams' local activation vectors, max-pool the resulting d^2
  encodings over all locations, and L2-normalise.  The vectorisation of the
  outer-product matrix is row-major, so element a*d + b holds the product of
  appearance channel a with motion channel b.

The co-occurrence feature is optionally concatenated with the fc6 features
to describe a frame at both the local and global level before the SVM.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidValue, ProvenanceError, ShapeError
from .tensor import FeatureVector, l2_normalize


@dataclass(frozen=True)
class CooccurrenceFeature(FeatureVector):
    """L2-normalised co-occurrence encoding plus its source conv tap."""

    source_layer: str = "c5"

    def __post_init__(self):
        super().__post_init__()
        d = int(round(np.sqrt(self.data.size)))
        if d * d != self.data.size:
            raise ShapeError(f"co-occurrence length {self.data.size} is not a perfect square")


def cooccurrence_raw(s_map, t_map, pooling="max"):
    """Pooled but unnormalised co-occurrence vector of two (h, w, d) maps.

    This is the pre-normalisation quantity oracle tests compare against a
    brute-force loop; ``bilinear_cooccurrence`` is the public entry point.
    """
    s = np.asarray(s_map, dtype=np.float32)
    t = np.asarray(t_map, dtype=np.float32)
    if s.ndim != 3 or t.ndim != 3:
        raise ShapeError("co-occurrence inputs must be (h, w, d) maps")
    if s.shape != t.shape:
        raise ShapeError(f"stream shapes differ: {s.shape} vs {t.shape}")
    if pooling not in ("max", "sum"):
        raise InvalidValue(f"pooling must be 'max' or 'sum', got {pooling!r}")
    h, w, d = s.shape
    # (h*w, d, d) stack of per-location outer products
    products = np.einsum("la,lb->lab", s.reshape(h * w, d), t.reshape(h * w, d))
    if pooling == "max":
        pooled = products.max(axis=0)
    else:
        pooled = products.sum(axis=0, dtype=np.float64).astype(np.float32)
    return pooled.reshape(d * d)


def bilinear_cooccurrence(s_map, t_map, pooling="max", source_layer="c5"):
    """Outer-product co-occurrence of two same-shape conv feature maps.

    Returns the location-pooled, L2-normalised d^2 encoding.  ``pooling``
    may be "sum" as an ablation variant of the default max pooling.
    """
    raw = cooccurrence_raw(s_map, t_map, pooling=pooling)
    return CooccurrenceFeature(l2_normalize(raw), "bilinear", source_layer)


def _require(vec, tag):
    if not isinstance(vec, FeatureVector):
        raise ProvenanceError(f"expected a FeatureVector with provenance {tag!r}")
    if vec.provenance != tag:
        raise ProvenanceError(f"expected provenance {tag!r}, got {vec.provenance!r}")
    return vec


def early_fusion(fc6_spatial, fc6_temporal):
    """Concatenate the two fc6 features, appearance stream first."""
    s = _require(fc6_spatial, "fc6_spatial")
    t = _require(fc6_temporal, "fc6_temporal")
    return FeatureVector(np.concatenate([s.data, t.data]), "concat")


def late_fusion(softmax_spatial, softmax_temporal):
    """Concatenate the two softmax outputs, appearance stream first."""
    s = _require(softmax_spatial, "softmax_spatial")
    t = _require(softmax_temporal, "softmax_temporal")
    for vec in (s, t):
        total = float(np.sum(vec.data, dtype=np.float64))
        if abs(total - 1.0) > 1e-4:
            raise InvalidValue(f"softmax input sums to {total}, not 1")
    return FeatureVector(np.concatenate([s.data, t.data]), "concat")


def save_feature(vec, path):
    """Persist a feature vector as a 1x1xD .fmap."""
    from .fio import write_fmap

    arr = vec.data if isinstance(vec, FeatureVector) else np.asarray(vec, dtype=np.float32)
    write_fmap(arr.reshape(1, 1, -1), path)


def load_feature(path, provenance="concat"):
    """Read a 1x1xD .fmap back into a FeatureVector."""
    from .fio import read_fmap

    arr = read_fmap(path)
    if arr.shape[:2] != (1, 1):
        raise ShapeError(f"persisted features must be 1x1xD, got {arr.shape}")
    return FeatureVector(arr.reshape(-1), provenance)


def cooccurrence_with_fc6(bilinear, fc6_spatial, fc6_temporal):
    """Join the local co-occurrence encoding with the two global fc6 features."""
    if not isinstance(bilinear, FeatureVector) or bilinear.provenance != "bilinear":
        raise ProvenanceError("first argument must carry the 'bilinear' provenance")
    norm = float(np.sqrt(np.sum(np.square(bilinear.data, dtype=np.float64))))
    if norm != 0.0 and abs(norm - 1.0) > 1e-4:
        raise InvalidValue(f"co-occurrence feature must be normalised, norm is {norm}")
    s = _require(fc6_spatial, "fc6_spatial")
    t = _require(fc6_temporal, "fc6_temporal")
    return FeatureVector(np.concatenate([bilinear.data, s.data, t.data]), "concat")
