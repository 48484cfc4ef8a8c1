"""Synthetic appearance-by-motion video generator.

Each class is an (appearance, motion) pair: a ring-textured blob that
translates across a smooth periodic background.  Classes share appearance
across motions and motion across appearances, so neither a single frame nor
flow alone can separate all classes; their combination can.  Positions are
toroidal (the blob wraps around) and every quantity is an analytic function
of continuous coordinates, so sub-pixel motion renders exactly.

"Moving camera" clips add a constant global drift to everything in view;
the blob keeps its class motion relative to the world.  Optional clutter
scatters static distractor blobs with the same texture family over the
background.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import SpecError
from .fio import write_image
from .pipeline import load_manifest

APPEARANCES = ("texture_A", "texture_B")
MOTIONS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "up": (0.0, -1.0),
    "down": (0.0, 1.0),
}
# ring period in pixels and an RGB tint per texture family; the tints have
# equal luma (0.299 R + 0.587 G + 0.114 B) so grayscale frames, and with them
# the optical flow, carry no appearance cue — textures differ only in colour
_TEXTURES = {
    "texture_A": {"period": 7.0, "tint": (1.0, 0.82, 0.5)},
    "texture_B": {"period": 7.0, "tint": (0.5, 0.9776, 1.0)},
}

DEFAULT_CLASSES = (
    ("texture_A", "left"),
    ("texture_A", "right"),
    ("texture_B", "left"),
    ("texture_B", "right"),
)


@dataclass
class SynthSpec:
    image_size: int = 32
    clip_len: int = 20
    fps: float = 25.0
    classes: tuple = DEFAULT_CLASSES
    train_clips_per_class: int = 20
    test_clips_per_class: int = 10
    noise_sigma: float = 0.02
    camera_motion_fraction: float = 0.0
    # speeds are per frame; flow pairs sit flow_stride frames apart, so the
    # inter-pair displacement (speed * stride) must stay in the solver's
    # reliable sub-2px range at 32x32
    drift_speed: float = 0.4
    motion_speed: float = 0.4
    blob_radius: float = 6.0
    clutter: int = 0
    seed: int = 0

    def validate(self):
        if len(self.classes) < 2:
            raise SpecError("need at least 2 classes")
        apps, mots = [], []
        for app, mot in self.classes:
            if app not in APPEARANCES:
                raise SpecError(f"unknown appearance {app!r}")
            if mot not in MOTIONS:
                raise SpecError(f"unknown motion {mot!r}")
            apps.append(app)
            mots.append(mot)
        if len(set(apps)) == len(apps):
            raise SpecError("at least one pair of classes must share an appearance")
        if len(set(mots)) == len(mots):
            raise SpecError("at least one pair of classes must share a motion")
        if self.image_size < 8 or self.clip_len < 1:
            raise SpecError("image_size >= 8 and clip_len >= 1 required")
        if self.train_clips_per_class < 1 or self.test_clips_per_class < 1:
            raise SpecError("clips per class must be >= 1")
        if not 0.0 <= self.camera_motion_fraction <= 1.0:
            raise SpecError("camera_motion_fraction must be in [0, 1]")
        return self


def motion_velocity(motion, speed):
    dx, dy = MOTIONS[motion]
    return (dx * speed, dy * speed)


def _toroidal_delta(coord, centre, size):
    return (coord - centre + size / 2.0) % size - size / 2.0


def _ring_value(xx, yy, cx, cy, period, phase, size):
    dx = _toroidal_delta(xx, cx, size)
    dy = _toroidal_delta(yy, cy, size)
    r = np.hypot(dx, dy)
    return 0.5 + 0.45 * np.cos(2.0 * np.pi * r / period + phase), r


def _blob_layer(xx, yy, cx, cy, appearance, phase, radius, size):
    tex = _TEXTURES[appearance]
    value, r = _ring_value(xx, yy, cx, cy, tex["period"], phase, size)
    alpha = np.clip((radius - r) / 1.5, 0.0, 1.0)
    rgb = value[:, :, None] * np.asarray(tex["tint"])[None, None, :]
    return rgb, alpha


class _Background:
    """Smooth periodic field: a few random low-frequency cosine waves."""

    def __init__(self, rng, size, n_waves=6):
        self.size = size
        self.freq = rng.integers(1, 5, size=(n_waves, 2))
        self.amp = rng.uniform(0.03, 0.07, size=n_waves)
        self.phase = rng.uniform(0.0, 2.0 * np.pi, size=n_waves)

    def render(self, xx, yy, offset):
        ox, oy = offset
        value = np.full(xx.shape, 0.5)
        for (fx, fy), a, ph in zip(self.freq, self.amp, self.phase):
            arg = 2.0 * np.pi * (fx * (xx + ox) + fy * (yy + oy)) / self.size + ph
            value += a * np.cos(arg)
        return value


def _render_clip(spec, rng, appearance, motion, moving):
    size = spec.image_size
    xx, yy = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64))
    bg = _Background(rng, size)
    c0 = rng.uniform(0.0, size, size=2)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    vel = np.asarray(motion_velocity(motion, spec.motion_speed))
    drift = np.zeros(2)
    if moving:
        angle = rng.uniform(0.0, 2.0 * np.pi)
        drift = spec.drift_speed * np.array([np.cos(angle), np.sin(angle)])
    distractors = []
    for _ in range(spec.clutter):
        distractors.append(
            {
                "pos": rng.uniform(0.0, size, size=2),
                "appearance": APPEARANCES[int(rng.integers(0, 2))],
                "phase": rng.uniform(0.0, 2.0 * np.pi),
                "radius": rng.uniform(2.5, 4.5),
            }
        )
    noise = rng.normal(0.0, spec.noise_sigma, size=(spec.clip_len, size, size, 3))

    frames, boxes = [], []
    for t in range(spec.clip_len):
        offset = drift * t
        frame = bg.render(xx, yy, offset)[:, :, None] * np.ones((1, 1, 3))
        for d in distractors:
            # world-fixed distractors appear shifted by the camera drift
            px, py = d["pos"] + offset
            rgb, alpha = _blob_layer(
                xx, yy, px % size, py % size, d["appearance"], d["phase"], d["radius"], size
            )
            frame = alpha[:, :, None] * rgb + (1.0 - alpha[:, :, None]) * frame
        cx, cy = (c0 + (vel + drift) * t) % size
        rgb, alpha = _blob_layer(xx, yy, cx, cy, appearance, phase, spec.blob_radius, size)
        frame = alpha[:, :, None] * rgb + (1.0 - alpha[:, :, None]) * frame
        frame = np.clip(frame + noise[t], 0.0, 1.0)
        frames.append(frame.astype(np.float32))
        r = spec.blob_radius
        boxes.append((t, int(round(cx - r)), int(round(cy - r)), int(np.ceil(2 * r)), int(np.ceil(2 * r))))
    return frames, boxes


def generate_dataset(spec, out_dir):
    """Write frames, per-frame box files and a manifest; returns the Manifest.

    Fully deterministic per seed: the same spec writes byte-identical trees.
    """
    spec.validate()
    os.makedirs(out_dir, exist_ok=True)
    frames_dir = os.path.join(out_dir, "frames")
    boxes_dir = os.path.join(out_dir, "boxes")
    os.makedirs(frames_dir, exist_ok=True)
    os.makedirs(boxes_dir, exist_ok=True)

    splits = {"train": spec.train_clips_per_class, "test": spec.test_clips_per_class}
    plan = []
    for split, count in splits.items():
        moving_count = int(round(spec.camera_motion_fraction * count))
        for class_idx in range(len(spec.classes)):
            for k in range(count):
                plan.append((split, class_idx, k, k < moving_count))
    seeds = np.random.SeedSequence(spec.seed).spawn(len(plan))

    records = {"train": [], "test": []}
    for (split, class_idx, k, moving), seed in zip(plan, seeds):
        appearance, motion = spec.classes[class_idx]
        clip_id = f"{split}_c{class_idx:02d}_k{k:03d}"
        rng = np.random.default_rng(seed)
        frames, boxes = _render_clip(spec, rng, appearance, motion, moving)
        clip_dir = os.path.join(frames_dir, clip_id)
        os.makedirs(clip_dir, exist_ok=True)
        frame_rel = []
        for t, frame in enumerate(frames):
            rel = f"frames/{clip_id}/f{t:03d}.ppm"
            write_image(frame, os.path.join(out_dir, rel))
            frame_rel.append(rel)
        box_rel = f"boxes/{clip_id}.txt"
        with open(os.path.join(out_dir, box_rel), "w") as f:
            for row in boxes:
                f.write(" ".join(str(v) for v in row) + "\n")
        records[split].append(
            {
                "id": clip_id,
                "class": class_idx,
                "fps": spec.fps,
                "frames": frame_rel,
                "camera": "moving" if moving else "static",
                "boxes": box_rel,
            }
        )

    doc = {
        "dataset": "synthetic appearance-x-motion",
        "classes": [f"{a}_{m}" for a, m in spec.classes],
        "train": records["train"],
        "test": records["test"],
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")
    return load_manifest(manifest_path)
