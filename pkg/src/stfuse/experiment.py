"""End-to-end experiment driver: train streams, fuse, fit SVMs, evaluate.

A single JSON config names the manifest and hyperparameters; stages write
their artifacts under ``out_dir`` (flow cache, STWN model files, feature
dumps, reports) so the CLI subcommands can also run them one at a time.
The stage order is flow -> train -> fuse -> fit-svm -> eval.  With a fixed
seed the whole run is deterministic, including the summary bytes.
"""

import json
import os
from dataclasses import replace

import numpy as np

from . import convnet, svm
from .errors import ConfigError, DegenerateLabels, InstanceError
from .evaluate import (
    dump_features,
    evaluate,
    format_summary_text,
    load_features,
    summary_to_json,
)
from .optflow import FlowParams
from .pipeline import (
    SYSTEMS,
    PipelineConfig,
    box_for_frame,
    classify_clip,
    clip_flow,
    flow_pairs,
    fusion_feature,
    load_manifest,
    parse_box_file,
    prepare_spatial_input,
    prepare_temporal_input,
    prepare_window_input,
    process_clips,
    sample_frames,
    sliding_windows,
)

SVM_SYSTEMS = ("early_fusion", "late_fusion", "cooccurrence", "cooccurrence_bbox")

_DEFAULTS = {
    "out_dir": "runs/exp",
    "systems": ["spatial_only", "temporal_only", "early_fusion", "late_fusion", "cooccurrence"],
    "seed": 0,
    "jobs": 1,
    "network": {"conv_channels": [8, 16], "fc_sizes": [64, 32], "input_size": [32, 32]},
    "training": {
        "lr": 0.05,
        "momentum": 0.5,
        "weight_decay": 5e-4,
        "epochs": 30,
        "batch_size": 8,
        "augment_shift": True,
    },
    "sampling": {"frame_rate": 5.0, "flow_stride": 5, "window_length": 15, "spatial_mode": "fixed_rate"},
    "flow": {
        "pyramid_levels": 4,
        "scale_factor": 0.5,
        "smoothness_alpha": 15.0,
        "solver_iterations": 100,
        "warp_steps_per_level": 3,
    },
    "fusion": {"source_tap": "c5", "pooling": "max"},
    "svm": {"lambda": 1e-4, "epochs": 100},
    "ablation": {"zero_center_temporal": True},
}


def _merge_section(doc, section, defaults, out):
    got = doc.get(section, {})
    if not isinstance(got, dict):
        raise ConfigError(f"{section}: expected an object")
    merged = dict(defaults)
    for key, value in got.items():
        if key not in defaults:
            raise ConfigError(f"{section}.{key}: unknown field")
        merged[key] = value
    out[section] = merged


def _check_number(cfg, path, lo=None, hi=None, integer=False):
    section, key = path.split(".")
    v = cfg[section][key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{path}: must be >= {lo}")
    if hi is not None and v > hi:
        raise ConfigError(f"{path}: must be <= {hi}")


def load_config(source):
    """Validate a config document (path or dict); fills in defaults."""
    if isinstance(source, (str, os.PathLike)):
        with open(source) as f:
            doc = json.load(f)
    else:
        doc = dict(source)
    known = set(_DEFAULTS) | {"manifest"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"{key}: unknown field")
    if "manifest" not in doc or not isinstance(doc["manifest"], str):
        raise ConfigError("manifest: required string field")
    cfg = {
        "manifest": doc["manifest"],
        "out_dir": doc.get("out_dir", _DEFAULTS["out_dir"]),
        "systems": doc.get("systems", list(_DEFAULTS["systems"])),
        "seed": doc.get("seed", 0),
        "jobs": doc.get("jobs", 1),
    }
    if not isinstance(cfg["systems"], list) or not cfg["systems"]:
        raise ConfigError("systems: expected a non-empty list")
    for name in cfg["systems"]:
        if name not in SYSTEMS:
            raise ConfigError(f"systems: unknown system {name!r}")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError("seed: expected an integer")
    if not isinstance(cfg["jobs"], int) or cfg["jobs"] < 1:
        raise ConfigError("jobs: expected a positive integer")
    for section in ("network", "training", "sampling", "flow", "fusion", "svm", "ablation"):
        _merge_section(doc, section, _DEFAULTS[section], cfg)
    for key in ("conv_channels", "fc_sizes", "input_size"):
        val = cfg["network"][key]
        if (
            not isinstance(val, (list, tuple))
            or len(val) != 2
            or not all(isinstance(v, int) and v > 0 for v in val)
        ):
            raise ConfigError(f"network.{key}: expected a pair of positive integers")
    _check_number(cfg, "training.lr", lo=0)
    _check_number(cfg, "training.momentum", lo=0, hi=1)
    _check_number(cfg, "training.weight_decay", lo=0)
    _check_number(cfg, "training.epochs", lo=1, integer=True)
    _check_number(cfg, "training.batch_size", lo=1, integer=True)
    _check_number(cfg, "sampling.frame_rate", lo=0)
    _check_number(cfg, "sampling.flow_stride", lo=1, integer=True)
    _check_number(cfg, "sampling.window_length", lo=1, integer=True)
    _check_number(cfg, "flow.pyramid_levels", lo=1, integer=True)
    _check_number(cfg, "flow.scale_factor", lo=0, hi=1)
    _check_number(cfg, "flow.smoothness_alpha", lo=0)
    _check_number(cfg, "flow.solver_iterations", lo=1, integer=True)
    _check_number(cfg, "flow.warp_steps_per_level", lo=1, integer=True)
    _check_number(cfg, "svm.lambda", lo=0)
    _check_number(cfg, "svm.epochs", lo=1, integer=True)
    if cfg["fusion"]["pooling"] not in ("max", "sum"):
        raise ConfigError("fusion.pooling: expected 'max' or 'sum'")
    if cfg["sampling"]["spatial_mode"] not in ("fixed_rate", "random_one"):
        raise ConfigError("sampling.spatial_mode: expected 'fixed_rate' or 'random_one'")
    if not isinstance(cfg["ablation"]["zero_center_temporal"], bool):
        raise ConfigError("ablation.zero_center_temporal: expected a boolean")
    return cfg


def pipeline_config(cfg):
    return PipelineConfig(
        frame_rate=cfg["sampling"]["frame_rate"],
        flow_stride=cfg["sampling"]["flow_stride"],
        window_length=cfg["sampling"]["window_length"],
        input_size=tuple(cfg["network"]["input_size"]),
        zero_center_temporal=cfg["ablation"]["zero_center_temporal"],
        fusion_tap=cfg["fusion"]["source_tap"],
        fusion_pooling=cfg["fusion"]["pooling"],
        flow_params=FlowParams(**cfg["flow"]),
        flow_cache_dir=os.path.join(cfg["out_dir"], "flowcache"),
        spatial_mode=cfg["sampling"]["spatial_mode"],
        sampling_seed=cfg["seed"],
    )


def _check_trainable(manifest, systems):
    labels = {c.class_label for c in manifest.train}
    if len(labels) < 2:
        raise DegenerateLabels(
            f"{', '.join(systems)}: train split has {len(labels)} class(es), need >= 2"
        )


# ---------------------------------------------------------------------------
# network training


def train_network(instances, net, tcfg, seed):
    """Seeded mini-batch SGD over (input, label) pairs, in place.

    With ``augment_shift`` enabled each visit applies a random circular
    shift to the spatial axes, which strips positional shortcuts and makes
    small nets learn translation-invariant cues.
    """
    rng = np.random.default_rng(seed)
    state = None
    n = len(instances)
    batch = int(tcfg["batch_size"])
    augment = bool(tcfg.get("augment_shift", True))
    axes = (1, 2) if len(net.input_shape) == 4 else (0, 1)
    h, w = net.input_shape[-3], net.input_shape[-2]
    for _ in range(int(tcfg["epochs"])):
        order = rng.permutation(n)
        shifts = rng.integers(0, (h, w), size=(n, 2)) if augment else None
        for start in range(0, n, batch):
            idxs = order[start : start + batch]
            acc = None
            for i in idxs:
                x, label = instances[i]
                if augment:
                    x = np.roll(x, tuple(shifts[i]), axis=axes)
                grads = convnet.backward(net, x, label)
                if acc is None:
                    acc = grads
                else:
                    for a, g in zip(acc, grads):
                        for k in a:
                            a[k] += g[k]
            scale = 1.0 / len(idxs)
            for a in acc:
                for k in a:
                    a[k] *= scale
            state = convnet.sgd_step(
                net, acc, tcfg["lr"], tcfg["momentum"], tcfg["weight_decay"], state
            )
    return net


def _train_boxes(clip, use_boxes):
    if not use_boxes or clip.box_file is None:
        return {}
    return parse_box_file(clip.box_file)


def spatial_instances(manifest, pcfg, use_boxes=False):
    out = []
    for clip in sorted(manifest.train, key=lambda c: c.clip_id):
        boxes = _train_boxes(clip, use_boxes)
        for idx in sample_frames(clip, pcfg.spatial_mode, rate=pcfg.frame_rate, seed=pcfg.sampling_seed):
            box = box_for_frame(boxes, idx)
            out.append((prepare_spatial_input(clip, idx, pcfg, box=box), clip.class_label))
    return out


def temporal_instances(manifest, pcfg, use_boxes=False):
    out = []
    for clip in sorted(manifest.train, key=lambda c: c.clip_id):
        boxes = _train_boxes(clip, use_boxes)
        for k, pair in enumerate(flow_pairs(clip, pcfg.flow_stride)):
            box = box_for_frame(boxes, pair[0])
            out.append((prepare_temporal_input(clip, k, pair, pcfg, box=box), clip.class_label))
    return out


def window_instances(manifest, pcfg):
    out = []
    for clip in sorted(manifest.train, key=lambda c: c.clip_id):
        if clip.num_frames < pcfg.window_length:
            continue
        for window in sliding_windows(clip, pcfg.window_length):
            out.append((prepare_window_input(clip, window, pcfg), clip.class_label))
    return out


def _needed_networks(systems):
    needed = set()
    for s in systems:
        if s == "spatial_only":
            needed.add("spatial")
        elif s == "temporal_only":
            needed.add("temporal")
        elif s == "conv3d":
            needed.add("window")
        elif s == "cooccurrence_bbox":
            needed.update(("spatial_bbox", "temporal_bbox"))
        else:
            needed.update(("spatial", "temporal"))
    return needed


def _build_net(kind, cfg, manifest, seed):
    ncfg = cfg["network"]
    h, w = ncfg["input_size"]
    if kind == "window":
        layers = convnet.default_window_layers(
            manifest.num_classes, tuple(ncfg["conv_channels"]), tuple(ncfg["fc_sizes"])
        )
        return convnet.build_network((cfg["sampling"]["window_length"], h, w, 3), layers, seed)
    layers = convnet.default_frame_layers(
        manifest.num_classes, tuple(ncfg["conv_channels"]), tuple(ncfg["fc_sizes"])
    )
    return convnet.build_network((h, w, 3), layers, seed)


_NET_SEED_OFFSET = {
    "spatial": 1,
    "temporal": 2,
    "window": 3,
    "spatial_bbox": 4,
    "temporal_bbox": 5,
}


def stage_flow(manifest, cfg, pcfg):
    """Precompute and cache flow for every clip in both splits."""

    def work(clip):
        for k, pair in enumerate(flow_pairs(clip, pcfg.flow_stride)):
            clip_flow(clip, k, pair, pcfg)

    process_clips(manifest.train + manifest.test, work, jobs=cfg["jobs"])


def stage_train(manifest, cfg, pcfg):
    """Train every network the requested systems need; saves .stwn files."""
    _check_trainable(manifest, cfg["systems"])
    models_dir = os.path.join(cfg["out_dir"], "models")
    os.makedirs(models_dir, exist_ok=True)
    nets = {}
    for name in sorted(_needed_networks(cfg["systems"])):
        seed = cfg["seed"] * 1009 + _NET_SEED_OFFSET[name]
        if name == "window":
            net = _build_net("window", cfg, manifest, seed)
            instances = window_instances(manifest, pcfg)
        elif name.startswith("spatial"):
            net = _build_net("frame", cfg, manifest, seed)
            instances = spatial_instances(manifest, pcfg, use_boxes=name.endswith("_bbox"))
        else:
            net = _build_net("frame", cfg, manifest, seed)
            instances = temporal_instances(manifest, pcfg, use_boxes=name.endswith("_bbox"))
        train_network(instances, net, cfg["training"], seed + 7)
        convnet.save_weights(net, os.path.join(models_dir, f"{name}.stwn"))
        nets[name] = net
    return nets


def _load_net(cfg, name):
    path = os.path.join(cfg["out_dir"], "models", f"{name}.stwn")
    if not os.path.isfile(path):
        raise ConfigError(f"missing trained model {path}; run the train stage first")
    return convnet.load_weights(path)


def _system_models(cfg, system, model=None):
    """Networks a system classifies with (bbox systems use their own nets)."""
    out = {}
    if system == "conv3d":
        out["window"] = _load_net(cfg, "window")
    elif system == "spatial_only":
        out["spatial"] = _load_net(cfg, "spatial")
    elif system == "temporal_only":
        out["temporal"] = _load_net(cfg, "temporal")
    elif system == "cooccurrence_bbox":
        out["spatial"] = _load_net(cfg, "spatial_bbox")
        out["temporal"] = _load_net(cfg, "temporal_bbox")
    else:
        out["spatial"] = _load_net(cfg, "spatial")
        out["temporal"] = _load_net(cfg, "temporal")
    if model is not None:
        out["svm"] = model
    return out


def stage_fuse(manifest, cfg, pcfg):
    """Extract per-instance fused features for every SVM-backed system."""
    features_dir = os.path.join(cfg["out_dir"], "features")
    os.makedirs(features_dir, exist_ok=True)
    for system in cfg["systems"]:
        if system not in SVM_SYSTEMS:
            continue
        models = _system_models(cfg, system)
        for split_name, clips in (("train", manifest.train), ("test", manifest.test)):
            def work(clip):
                rows = []
                for k, pair in enumerate(flow_pairs(clip, pcfg.flow_stride)):
                    feat = fusion_feature(system, clip, k, pair, models, pcfg)
                    rows.append((clip.clip_id, clip.class_label, feat))
                return rows

            gathered = process_clips(clips, work, jobs=cfg["jobs"])
            rows = [row for _, result in gathered for row in result]
            dump_features(rows, os.path.join(features_dir, f"{system}_{split_name}.tsv"))
            if rows:
                # one line per clip for external embedding tools
                by_clip = {}
                for clip_id, cls, feat in rows:
                    by_clip.setdefault(clip_id, (cls, []))[1].append(feat.data)
                clip_rows = [
                    (clip_id, cls, np.mean(np.stack(vecs), axis=0))
                    for clip_id, (cls, vecs) in sorted(by_clip.items())
                ]
                dump_features(
                    clip_rows, os.path.join(features_dir, f"{system}_{split_name}_clips.tsv")
                )


def stage_fit_svm(manifest, cfg):
    """Fit one linear model per SVM-backed system from dumped features."""
    _check_trainable(manifest, cfg["systems"])
    models_dir = os.path.join(cfg["out_dir"], "models")
    os.makedirs(models_dir, exist_ok=True)
    models = {}
    for system in cfg["systems"]:
        if system not in SVM_SYSTEMS:
            continue
        path = os.path.join(cfg["out_dir"], "features", f"{system}_train.tsv")
        if not os.path.isfile(path):
            raise ConfigError(f"missing features {path}; run the fuse stage first")
        rows = load_features(path)
        feats = [r[2] for r in rows]
        labels = [r[1] for r in rows]
        try:
            model = svm.train_svm(
                feats,
                labels,
                lam=cfg["svm"]["lambda"],
                epochs=int(cfg["svm"]["epochs"]),
                seed=cfg["seed"],
                num_classes=manifest.num_classes,
            )
        except DegenerateLabels as exc:
            raise DegenerateLabels(f"{system}: {exc}") from exc
        svm.save_model(model, os.path.join(models_dir, f"svm_{system}.stwn"))
        models[system] = model
    return models


def stage_eval(manifest, cfg, pcfg):
    """Classify the test split per system and write reports."""
    reports = {}
    for system in cfg["systems"]:
        model = None
        if system in SVM_SYSTEMS:
            path = os.path.join(cfg["out_dir"], "models", f"svm_{system}.stwn")
            if not os.path.isfile(path):
                raise ConfigError(f"missing model {path}; run the fit-svm stage first")
            model = svm.load_model(path)
        models = _system_models(cfg, system, model)

        def work(clip):
            try:
                pred, _ = classify_clip(clip, system, models, pcfg)
                return ("ok", pred)
            except InstanceError as exc:
                return ("skip", str(exc))

        predictions, skipped = [], []
        for clip, (status, value) in process_clips(manifest.test, work, jobs=cfg["jobs"]):
            if status == "ok":
                predictions.append((clip.clip_id, clip.class_label, value, clip.camera_motion))
            else:
                skipped.append((clip.clip_id, clip.class_label, clip.camera_motion, value))
        reports[system] = evaluate(predictions, num_classes=manifest.num_classes, skipped=skipped)
    write_reports(reports, cfg["out_dir"])
    return reports


def write_reports(reports, out_dir):
    reports_dir = os.path.join(out_dir, "reports")
    os.makedirs(reports_dir, exist_ok=True)
    with open(os.path.join(reports_dir, "summary.json"), "w") as f:
        f.write(summary_to_json(reports))
    text = format_summary_text(reports)
    with open(os.path.join(reports_dir, "summary.txt"), "w") as f:
        f.write(text)
    return text


def run_experiment(config):
    """Full pipeline on an existing dataset; returns {system: EvalReport}."""
    cfg = load_config(config)
    manifest = load_manifest(cfg["manifest"])
    _check_trainable(manifest, cfg["systems"])
    os.makedirs(cfg["out_dir"], exist_ok=True)
    pcfg = pipeline_config(cfg)
    stage_flow(manifest, cfg, pcfg)
    stage_train(manifest, cfg, pcfg)
    stage_fuse(manifest, cfg, pcfg)
    stage_fit_svm(manifest, cfg)
    return stage_eval(manifest, cfg, pcfg)
