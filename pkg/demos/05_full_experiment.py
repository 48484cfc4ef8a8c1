"""End-to-end: generate data, train both streams, fuse, classify, report.

A scaled-down version of the main experiment (fewer clips and epochs, three
systems) that still shows the headline effect: each stream alone tops out
near 50% on the four classes, while fused systems separate everything.
Takes roughly half a minute on a laptop CPU.
"""

import os
import tempfile

from stfuse.experiment import run_experiment
from stfuse.evaluate import format_summary_text
from stfuse.synth import SynthSpec, generate_dataset

work = tempfile.mkdtemp(prefix="stfuse_exp_")
spec = SynthSpec(train_clips_per_class=8, test_clips_per_class=4, seed=7)
generate_dataset(spec, os.path.join(work, "data"))

reports = run_experiment(
    {
        "manifest": os.path.join(work, "data", "manifest.json"),
        "out_dir": os.path.join(work, "run"),
        "systems": ["spatial_only", "temporal_only", "cooccurrence"],
        "seed": 7,
        "training": {"epochs": 18},
    }
)

print(format_summary_text(reports))
print(f"artifacts under {os.path.join(work, 'run')}:")
for sub in ("models", "features", "reports"):
    names = sorted(os.listdir(os.path.join(work, "run", sub)))
    print(f"  {sub}/: {', '.join(names)}")
