"""Generate the appearance-by-motion synthetic dataset and look inside.

Four classes pair two blob textures with two motion directions.  Any single
frame reveals the texture but not the motion; optical flow reveals the
motion but not the texture.  Only their combination separates all classes.
"""

import os
import tempfile

import numpy as np

from stfuse.fio import read_image
from stfuse.optflow import compute_flow, rgb_to_gray
from stfuse.pipeline import parse_box_file
from stfuse.synth import SynthSpec, generate_dataset

out = tempfile.mkdtemp(prefix="stfuse_demo_")
spec = SynthSpec(train_clips_per_class=2, test_clips_per_class=1, seed=42)
manifest = generate_dataset(spec, out)

print(f"dataset at {out}")
print(f"classes: {manifest.classes}")
print(f"{len(manifest.train)} train clips, {len(manifest.test)} test clips\n")

for clip in manifest.train[::2][:4]:
    label = manifest.classes[clip.class_label]
    frame = read_image(clip.frame_paths[0])
    a = rgb_to_gray(frame)
    b = rgb_to_gray(read_image(clip.frame_paths[1]))
    flow = compute_flow(a, b)
    box = parse_box_file(clip.box_file)[0]
    size = frame.shape[0]
    x0, y0 = max(box.x, 0), max(box.y, 0)
    x1, y1 = min(box.x + box.w, size), min(box.y + box.h, size)
    mean_rb = frame[y0:y1, x0:x1, 0].mean() - frame[y0:y1, x0:x1, 2].mean()
    mean_u = flow.u[y0:y1, x0:x1].mean()
    print(
        f"{clip.clip_id} ({label:16s}): box colour R-B {mean_rb:+.3f} "
        f"(texture cue), box flow u {mean_u:+.2f} px (motion cue)"
    )

print("\nGray frames hide the texture (equal-luma tints), flow hides nothing about motion;")
print("the spatial stream sees colour, the temporal stream sees displacement.")
