"""The co-occurrence fusion operator on hand-made feature maps.

Two fake conv feature maps stand in for the appearance and motion streams.
At every location the streams' channel vectors form an outer product; max
pooling over locations keeps the strongest appearance-motion pairing per
channel pair, and L2 normalisation gives the final encoding.
"""

import numpy as np

from stfuse.fusion import bilinear_cooccurrence, cooccurrence_raw

# one location, two channels per stream: the outer product is readable by eye
s = np.array([[[1.0, 0.0]]], np.float32)  # appearance fires channel 0
t = np.array([[[0.0, 2.0]]], np.float32)  # motion fires channel 1
raw = cooccurrence_raw(s, t)
print("single location:")
print(f"  appearance {s.ravel()}, motion {t.ravel()}")
print(f"  vec(outer product) = {raw}  (row-major: index a*d+b holds s[a]*t[b])")
print(f"  normalised feature = {bilinear_cooccurrence(s, t).data}")

# multiple locations: max pooling keeps per-pair peaks across the grid
rng = np.random.default_rng(3)
s = rng.uniform(0, 1, (4, 4, 3)).astype(np.float32)
t = rng.uniform(0, 1, (4, 4, 3)).astype(np.float32)
raw = cooccurrence_raw(s, t)
per_loc = np.einsum("hwa,hwb->hwab", s, t).reshape(16, 9)
print("\n4x4 grid, 3 channels per stream:")
print(f"  encoding length {raw.size} (= 3^2)")
print(f"  every pooled value is attained at some location: "
      f"{all(np.any(per_loc[:, k] == raw[k]) for k in range(9))}")

# the encoding is invariant to positive rescaling of either stream
a = bilinear_cooccurrence(s, t).data
b = bilinear_cooccurrence(5.0 * s, 0.25 * t).data
print(f"  scale invariance after normalisation: max diff {np.abs(a - b).max():.2e}")

# swapping the streams transposes the (reshaped) encoding
ab = cooccurrence_raw(s, t).reshape(3, 3)
ba = cooccurrence_raw(t, s).reshape(3, 3)
print(f"  swap symmetry (transpose): {np.array_equal(ab, ba.T)}")
