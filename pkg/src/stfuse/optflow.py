"""Dense optical flow and the temporal stream's 3-channel input.

The solver is pyramidal Horn-Schunck with inter-level warping: a
coarse-to-fine Gaussian pyramid, and at each level a few warp steps that
re-linearise the brightness-constancy term around the current flow before
running Jacobi iterations on the regularised system

    u <- ubar - Ix * (Ix*(ubar-u0) + Iy*(vbar-v0) + It) / (alpha^2 + Ix^2 + Iy^2)

where (u0, v0) is the flow the second frame was warped with and ubar is the
classic weighted 3x3 neighbourhood average.  Everything is plain single-thread
numpy, so two runs on the same inputs are bitwise identical.

``smoothness_alpha`` is calibrated against 8-bit intensities; frames arrive
in [0, 1] and are scaled by 255 internally so the default alpha keeps the
usual balance between the data and smoothness terms.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InputTooSmall, InvalidValue, ShapeError
from .tensor import feature_map

_INTENSITY_SCALE = 255.0

# weighted neighbourhood average from the original Horn-Schunck scheme
_AVG_KERNEL = np.array(
    [
        [1 / 12, 1 / 6, 1 / 12],
        [1 / 6, 0.0, 1 / 6],
        [1 / 12, 1 / 6, 1 / 12],
    ]
)


@dataclass(frozen=True)
class FlowParams:
    pyramid_levels: int = 4
    scale_factor: float = 0.5
    smoothness_alpha: float = 15.0
    solver_iterations: int = 100
    warp_steps_per_level: int = 3

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise InvalidValue("pyramid_levels must be >= 1")
        if not 0.0 < self.scale_factor < 1.0:
            raise InvalidValue("scale_factor must be in (0, 1)")
        if self.smoothness_alpha <= 0.0:
            raise InvalidValue("smoothness_alpha must be positive")
        if self.solver_iterations < 1:
            raise InvalidValue("solver_iterations must be >= 1")
        if self.warp_steps_per_level < 1:
            raise InvalidValue("warp_steps_per_level must be >= 1")


@dataclass(frozen=True)
class FlowField:
    """Per-pixel (u, v) displacement in pixels; u is horizontal, v vertical."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float32)
        v = np.asarray(self.v, dtype=np.float32)
        if u.ndim != 2 or u.shape != v.shape:
            raise ShapeError("u and v must be matching 2-D grids")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise InvalidValue("flow field contains non-finite values")
        u = u.copy()
        v = v.copy()
        u.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self):
        return self.u.shape[0]

    @property
    def width(self):
        return self.u.shape[1]


def rgb_to_gray(fmap):
    """Collapse a depth-3 map to luma (0.299 R + 0.587 G + 0.114 B)."""
    arr = np.asarray(fmap, dtype=np.float32)
    if arr.ndim == 2:
        return arr
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    if arr.shape[2] != 3:
        raise ShapeError(f"expected depth 1 or 3, got {arr.shape[2]}")
    gray = 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]
    return gray.astype(np.float32)


def bilinear_resize(img, out_h, out_w):
    """Resize a 2-D grid with bilinear interpolation (half-pixel centres).

    Output pixel (i, j) samples the input at ((i+0.5)*h/out_h - 0.5,
    (j+0.5)*w/out_w - 0.5), clamped to the grid.  When sizes match the
    sample points are exactly the input pixels.
    """
    src = np.asarray(img, dtype=np.float64)
    h, w = src.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - wx) + src[np.ix_(y0, x1)] * wx
    bot = src[np.ix_(y1, x0)] * (1 - wx) + src[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def warp_backward(img, u, v):
    """Sample ``img`` at (x + u, y + v) per pixel; border pixels clamp."""
    src = np.asarray(img, dtype=np.float64)
    h, w = src.shape
    xs = np.clip(np.arange(w)[None, :] + u, 0.0, w - 1.0)
    ys = np.clip(np.arange(h)[:, None] + v, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = xs - x0
    wy = ys - y0
    top = src[y0, x0] * (1 - wx) + src[y0, x1] * wx
    bot = src[y1, x0] * (1 - wx) + src[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def _neighbour_avg(field):
    return ndimage.correlate(field, _AVG_KERNEL, mode="nearest")


def _as_gray_frame(frame, name):
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise ShapeError(f"{name} must be grayscale (depth 1)")
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D grayscale frame")
    return arr


def _pyramid_sizes(h, w, params):
    sizes = [(h, w)]
    for level in range(1, params.pyramid_levels):
        nh = int(round(h * params.scale_factor**level))
        nw = int(round(w * params.scale_factor**level))
        if min(nh, nw) < 8:
            break
        sizes.append((nh, nw))
    return sizes


def compute_flow(frame_a, frame_b, params=None):
    """Dense (u, v) displacement from frame_a to frame_b.

    Frames must be same-size grayscale maps with values in [0, 1] and at
    least 8x8 pixels.  The result is deterministic for fixed inputs.
    """
    if params is None:
        params = FlowParams()
    a = _as_gray_frame(frame_a, "frame_a")
    b = _as_gray_frame(frame_b, "frame_b")
    if a.shape != b.shape:
        raise ShapeError(f"frame sizes differ: {a.shape} vs {b.shape}")
    h, w = a.shape
    if min(h, w) < 8:
        raise InputTooSmall(f"frames must be at least 8x8, got {h}x{w}")

    a = a * _INTENSITY_SCALE
    b = b * _INTENSITY_SCALE
    alpha_sq = params.smoothness_alpha**2

    sizes = _pyramid_sizes(h, w, params)
    pyr_a = [a]
    pyr_b = [b]
    for nh, nw in sizes[1:]:
        pyr_a.append(bilinear_resize(ndimage.gaussian_filter(pyr_a[-1], 1.0), nh, nw))
        pyr_b.append(bilinear_resize(ndimage.gaussian_filter(pyr_b[-1], 1.0), nh, nw))

    u = np.zeros(sizes[-1])
    v = np.zeros(sizes[-1])
    for level in range(len(sizes) - 1, -1, -1):
        lh, lw = sizes[level]
        if u.shape != (lh, lw):
            u = bilinear_resize(u, lh, lw) * (lw / u.shape[1])
            v = bilinear_resize(v, lh, lw) * (lh / v.shape[0])
        la, lb = pyr_a[level], pyr_b[level]
        for _ in range(params.warp_steps_per_level):
            bw = warp_backward(lb, u, v)
            ix = 0.5 * (np.gradient(la, axis=1) + np.gradient(bw, axis=1))
            iy = 0.5 * (np.gradient(la, axis=0) + np.gradient(bw, axis=0))
            it = bw - la
            denom = alpha_sq + ix * ix + iy * iy
            u0 = u.copy()
            v0 = v.copy()
            for _ in range(params.solver_iterations):
                ubar = _neighbour_avg(u)
                vbar = _neighbour_avg(v)
                t = (ix * (ubar - u0) + iy * (vbar - v0) + it) / denom
                u = ubar - ix * t
                v = vbar - iy * t

    return FlowField(u.astype(np.float32), v.astype(np.float32))


def flow_to_feature_map(flow):
    """Pack a flow field into a depth-3 map (u, v, magnitude)."""
    u = flow.u.astype(np.float32)
    v = flow.v.astype(np.float32)
    mag = np.hypot(u.astype(np.float64), v.astype(np.float64)).astype(np.float32)
    return feature_map(np.stack([u, v, mag], axis=2))


def flow_to_fmap(flow):
    """Depth-2 (u, v) map for .fmap persistence."""
    return feature_map(np.stack([flow.u, flow.v], axis=2))


def flow_from_fmap(fmap):
    arr = np.asarray(fmap)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ShapeError("persisted flow must have depth 2")
    return FlowField(arr[:, :, 0], arr[:, :, 1])


def mean_subtract(fmap):
    """Zero-centre every channel of a map (preserves shape).

    For optical feature maps this cancels constant global motion between
    frames; for RGB frames it is the usual per-channel mean normalisation.
    """
    arr = np.asarray(fmap, dtype=np.float32)
    if arr.ndim != 3:
        raise ShapeError("expected a (h, w, d) map")
    means = arr.mean(axis=(0, 1), dtype=np.float64)
    return feature_map(arr - means.astype(np.float32))
