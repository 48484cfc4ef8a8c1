"""Video-level orchestration: manifests, instancing and per-clip decisions.

A clip is an ordered list of frame image paths plus metadata.  Every
classification system turns a clip into a list of instances (single frames,
flow pairs or sliding windows), classifies each instance independently, and
aggregates with a max vote.  Clips are independent work units; the helpers
here keep results ordered by clip id so parallel runs are reproducible.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import convnet, fusion, svm
from .errors import (
    BoxError,
    ConfigError,
    EmptyDecisions,
    FormatError,
    InstanceError,
    InvalidValue,
    RateError,
    ShapeError,
)
from .fio import read_fmap, read_image, write_fmap
from .optflow import (
    FlowParams,
    bilinear_resize,
    compute_flow,
    flow_from_fmap,
    flow_to_feature_map,
    flow_to_fmap,
    mean_subtract,
    rgb_to_gray,
)
from .tensor import FeatureVector, feature_map

SYSTEMS = (
    "spatial_only",
    "temporal_only",
    "early_fusion",
    "late_fusion",
    "conv3d",
    "cooccurrence",
    "cooccurrence_bbox",
)

CAMERA_FLAGS = ("static", "moving")


@dataclass(frozen=True)
class BoundingBox:
    frame: int
    x: int
    y: int
    w: int
    h: int


@dataclass
class ClipRecord:
    clip_id: str
    class_label: int
    fps: float
    frame_paths: list
    camera_motion: str = "static"
    box_file: str = None

    @property
    def num_frames(self):
        return len(self.frame_paths)


@dataclass
class Manifest:
    dataset: str
    classes: list
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)

    @property
    def num_classes(self):
        return len(self.classes)


# ---------------------------------------------------------------------------
# manifest ingestion


def _clip_from_json(obj, base_dir, where):
    for key in ("id", "class", "fps", "frames", "camera"):
        if key not in obj:
            raise ConfigError(f"{where}: missing field {key!r}")
    if obj["camera"] not in CAMERA_FLAGS:
        raise ConfigError(f"{where}.camera: expected one of {CAMERA_FLAGS}, got {obj['camera']!r}")
    frames = [os.path.join(base_dir, f) for f in obj["frames"]]
    box_file = os.path.join(base_dir, obj["boxes"]) if obj.get("boxes") else None
    return ClipRecord(
        clip_id=str(obj["id"]),
        class_label=int(obj["class"]),
        fps=float(obj["fps"]),
        frame_paths=frames,
        camera_motion=obj["camera"],
        box_file=box_file,
    )


def validate_manifest(manifest, check_frames=True):
    """Reject malformed manifests before any computation starts."""
    seen = set()
    for split_name, clips in (("train", manifest.train), ("test", manifest.test)):
        for i, clip in enumerate(clips):
            where = f"{split_name}[{i}] ({clip.clip_id})"
            if clip.clip_id in seen:
                raise ConfigError(f"{where}: duplicate clip id")
            seen.add(clip.clip_id)
            if not 0 <= clip.class_label < manifest.num_classes:
                raise ConfigError(f"{where}: class {clip.class_label} out of range")
            if clip.fps <= 0:
                raise ConfigError(f"{where}: fps must be positive")
            if clip.num_frames < 1:
                raise ConfigError(f"{where}: clip has no frames")
            if clip.camera_motion not in CAMERA_FLAGS:
                raise ConfigError(f"{where}: bad camera flag {clip.camera_motion!r}")
            if check_frames:
                for p in clip.frame_paths:
                    if not os.path.isfile(p):
                        raise ConfigError(f"{where}: missing frame file {p}")
                if clip.box_file and not os.path.isfile(clip.box_file):
                    raise ConfigError(f"{where}: missing box file {clip.box_file}")
    return manifest


def load_manifest(path, check_frames=True):
    with open(path) as f:
        doc = json.load(f)
    for key in ("dataset", "classes", "train", "test"):
        if key not in doc:
            raise ConfigError(f"manifest: missing field {key!r}")
    base = os.path.dirname(os.path.abspath(path))
    manifest = Manifest(
        dataset=str(doc["dataset"]),
        classes=[str(c) for c in doc["classes"]],
        train=[_clip_from_json(o, base, f"train[{i}]") for i, o in enumerate(doc["train"])],
        test=[_clip_from_json(o, base, f"test[{i}]") for i, o in enumerate(doc["test"])],
    )
    return validate_manifest(manifest, check_frames=check_frames)


# ---------------------------------------------------------------------------
# instancing


def sample_frames(clip, mode, rate=None, seed=None):
    """Frame indices for the appearance stream.

    fixed_rate: indices 0, s, 2s, ... with stride s = round(fps / rate).
    random_one: a single seeded-uniform index.
    """
    n = clip.num_frames
    if mode == "fixed_rate":
        if rate is None or rate <= 0:
            raise InvalidValue("fixed_rate sampling needs a positive rate")
        if rate > clip.fps:
            raise RateError(f"rate {rate} exceeds clip fps {clip.fps}")
        stride = int(np.floor(clip.fps / rate + 0.5))
        return list(range(0, n, stride))
    if mode == "random_one":
        rng = np.random.default_rng(seed)
        return [int(rng.integers(0, n))]
    raise InvalidValue(f"unknown sampling mode {mode!r}")


def flow_pairs(clip, delta):
    """Frame index pairs (k*delta, (k+1)*delta) while the end stays in range."""
    if delta < 1:
        raise InvalidValue("flow stride must be >= 1")
    n = clip.num_frames
    return [(k * delta, (k + 1) * delta) for k in range((n - 1) // delta)]


def sliding_windows(clip, length):
    """All length-L windows of consecutive frames, advancing one frame."""
    if length < 1:
        raise InvalidValue("window length must be >= 1")
    n = clip.num_frames
    return [list(range(i, i + length)) for i in range(max(0, n - length + 1))]


def max_vote(decisions):
    """Most frequent class; ties break to the lowest class index."""
    if len(decisions) == 0:
        raise EmptyDecisions("no decisions to vote on")
    counts = np.bincount(np.asarray(decisions, dtype=np.int64))
    return int(np.argmax(counts))


# ---------------------------------------------------------------------------
# boxes and geometry


def parse_box_file(path):
    """Read 'frame x y w h' lines into {frame index: BoundingBox}."""
    boxes = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise FormatError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            try:
                frame, x, y, w, h = (int(float(p)) for p in parts)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric field") from exc
            boxes[frame] = BoundingBox(frame, x, y, w, h)
    return boxes


def box_for_frame(boxes, frame_idx):
    """Most recent box at or before frame_idx; None means use the full frame.

    Frames earlier than the first listed box also fall back to the full
    frame, matching the no-boxes-at-all case.
    """
    if not boxes:
        return None
    best = None
    for idx in sorted(boxes):
        if idx > frame_idx:
            break
        best = boxes[idx]
    return best


def crop_and_resize(frame, box, out_h, out_w):
    """Clamped crop followed by bilinear resize to (out_h, out_w)."""
    arr = np.asarray(frame, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w = arr.shape[:2]
    x0, y0 = max(box.x, 0), max(box.y, 0)
    x1, y1 = min(box.x + box.w, w), min(box.y + box.h, h)
    if x1 <= x0 or y1 <= y0:
        raise BoxError(f"box {box} does not intersect a {h}x{w} frame")
    crop = arr[y0:y1, x0:x1]
    channels = [bilinear_resize(crop[:, :, c], out_h, out_w) for c in range(crop.shape[2])]
    return feature_map(np.stack(channels, axis=2).astype(np.float32))


def resize_map(fmap, out_h, out_w):
    arr = np.asarray(fmap, dtype=np.float32)
    if arr.shape[0] == out_h and arr.shape[1] == out_w:
        return feature_map(arr)
    channels = [bilinear_resize(arr[:, :, c], out_h, out_w) for c in range(arr.shape[2])]
    return feature_map(np.stack(channels, axis=2).astype(np.float32))


# ---------------------------------------------------------------------------
# instance preparation


@dataclass
class PipelineConfig:
    frame_rate: float = 5.0
    flow_stride: int = 5
    window_length: int = 15
    input_size: tuple = (32, 32)
    zero_center_temporal: bool = True
    fusion_tap: str = "c5"
    fusion_pooling: str = "max"
    flow_params: FlowParams = field(default_factory=FlowParams)
    flow_cache_dir: str = None
    spatial_mode: str = "fixed_rate"
    sampling_seed: int = 0


def _to_depth3(arr):
    if arr.shape[2] == 3:
        return arr
    if arr.shape[2] == 1:
        return np.repeat(arr, 3, axis=2)
    raise ShapeError(f"expected depth 1 or 3 frames, got {arr.shape[2]}")


def _clip_boxes(clip):
    if clip.box_file is None:
        return {}
    return parse_box_file(clip.box_file)


def prepare_spatial_input(clip, frame_idx, cfg, box=None):
    """RGB network input: optional box crop, resize, per-channel zero-centre."""
    frame = _to_depth3(read_image(clip.frame_paths[frame_idx]))
    out_h, out_w = cfg.input_size
    if box is not None:
        frame = crop_and_resize(frame, box, out_h, out_w)
    else:
        frame = resize_map(frame, out_h, out_w)
    return mean_subtract(frame)


def clip_flow(clip, pair_index, pair, cfg):
    """Flow for one pair, via the .fmap cache when a cache dir is set."""
    if cfg.flow_cache_dir:
        path = os.path.join(cfg.flow_cache_dir, f"{clip.clip_id}_p{pair_index:04d}.fmap")
        if os.path.isfile(path):
            return flow_from_fmap(read_fmap(path))
    a = rgb_to_gray(read_image(clip.frame_paths[pair[0]]))
    b = rgb_to_gray(read_image(clip.frame_paths[pair[1]]))
    flow = compute_flow(a, b, cfg.flow_params)
    if cfg.flow_cache_dir:
        os.makedirs(cfg.flow_cache_dir, exist_ok=True)
        write_fmap(flow_to_fmap(flow), path)
    return flow


def prepare_temporal_input(clip, pair_index, pair, cfg, box=None):
    """Optical feature map input: (u, v, magnitude), cropped and centred."""
    omap = flow_to_feature_map(clip_flow(clip, pair_index, pair, cfg))
    out_h, out_w = cfg.input_size
    if box is not None:
        omap = crop_and_resize(omap, box, out_h, out_w)
    else:
        omap = resize_map(omap, out_h, out_w)
    if cfg.zero_center_temporal:
        omap = mean_subtract(omap)
    return omap


def prepare_window_input(clip, window, cfg):
    """Stacked RGB frames for the 3-D network, zero-centred jointly."""
    out_h, out_w = cfg.input_size
    frames = []
    for idx in window:
        frame = _to_depth3(read_image(clip.frame_paths[idx]))
        frames.append(resize_map(frame, out_h, out_w))
    stack = np.stack(frames).astype(np.float32)
    means = stack.mean(axis=(0, 1, 2), dtype=np.float64).astype(np.float32)
    return stack - means


# ---------------------------------------------------------------------------
# per-system classification


def _softmax_tap(net):
    return net.layers[-1].name


def _net_argmax(net, x):
    taps = convnet.forward(net, x)
    return int(np.argmax(taps[_softmax_tap(net)]))


def fusion_feature(system, clip, pair_index, pair, models, cfg):
    """Per-instance fused feature for the SVM-backed systems."""
    box = None
    if system == "cooccurrence_bbox":
        box = box_for_frame(_clip_boxes(clip), pair[0])
    s_in = prepare_spatial_input(clip, pair[0], cfg, box=box)
    t_in = prepare_temporal_input(clip, pair_index, pair, cfg, box=box)
    s_taps = convnet.forward(models["spatial"], s_in)
    t_taps = convnet.forward(models["temporal"], t_in)
    if system == "late_fusion":
        return fusion.late_fusion(
            FeatureVector(s_taps[_softmax_tap(models["spatial"])], "softmax_spatial"),
            FeatureVector(t_taps[_softmax_tap(models["temporal"])], "softmax_temporal"),
        )
    fc6_s = FeatureVector(s_taps["fc6"], "fc6_spatial")
    fc6_t = FeatureVector(t_taps["fc6"], "fc6_temporal")
    if system == "early_fusion":
        return fusion.early_fusion(fc6_s, fc6_t)
    if system in ("cooccurrence", "cooccurrence_bbox"):
        bilinear = fusion.bilinear_cooccurrence(
            s_taps[cfg.fusion_tap],
            t_taps[cfg.fusion_tap],
            pooling=cfg.fusion_pooling,
            source_layer=cfg.fusion_tap,
        )
        return fusion.cooccurrence_with_fc6(bilinear, fc6_s, fc6_t)
    raise ConfigError(f"{system} is not an SVM-backed system")


def _require_models(system, models):
    needed = {
        "spatial_only": ("spatial",),
        "temporal_only": ("temporal",),
        "conv3d": ("window",),
        "early_fusion": ("spatial", "temporal", "svm"),
        "late_fusion": ("spatial", "temporal", "svm"),
        "cooccurrence": ("spatial", "temporal", "svm"),
        "cooccurrence_bbox": ("spatial", "temporal", "svm"),
    }[system]
    for key in needed:
        if models.get(key) is None:
            raise ConfigError(f"system {system!r} needs a {key!r} model")


def classify_clip(clip, system, models, cfg):
    """Classify one clip; returns (voted class, per-instance decision list)."""
    if system not in SYSTEMS:
        raise ConfigError(f"unknown system {system!r}")
    _require_models(system, models)
    decisions = []
    if system == "spatial_only":
        idxs = sample_frames(clip, cfg.spatial_mode, rate=cfg.frame_rate, seed=cfg.sampling_seed)
        for idx in idxs:
            decisions.append(_net_argmax(models["spatial"], prepare_spatial_input(clip, idx, cfg)))
    elif system == "temporal_only":
        for k, pair in enumerate(flow_pairs(clip, cfg.flow_stride)):
            decisions.append(
                _net_argmax(models["temporal"], prepare_temporal_input(clip, k, pair, cfg))
            )
    elif system == "conv3d":
        if clip.num_frames < cfg.window_length:
            raise InstanceError(
                clip.clip_id,
                f"clip {clip.clip_id!r} has {clip.num_frames} frames, "
                f"window needs {cfg.window_length}",
            )
        for window in sliding_windows(clip, cfg.window_length):
            decisions.append(_net_argmax(models["window"], prepare_window_input(clip, window, cfg)))
    else:
        pairs = flow_pairs(clip, cfg.flow_stride)
        if not pairs:
            raise InstanceError(
                clip.clip_id,
                f"clip {clip.clip_id!r} is too short for flow stride {cfg.flow_stride}",
            )
        for k, pair in enumerate(pairs):
            feat = fusion_feature(system, clip, k, pair, models, cfg)
            decisions.append(svm.predict(models["svm"], feat)[0])
    return max_vote(decisions), decisions


def process_clips(clips, fn, jobs=1):
    """Apply ``fn`` to every clip; results come back sorted by clip id."""
    ordered = sorted(clips, key=lambda c: c.clip_id)
    if jobs <= 1:
        results = [fn(c) for c in ordered]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(fn, ordered))
    return list(zip(ordered, results))
