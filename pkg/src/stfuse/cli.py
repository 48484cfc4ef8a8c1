"""Command-line surface tying the experiment stages together.

Subcommands mirror the stage order: gen, flow, train, fuse, fit-svm, eval,
experiment (all stages), report (re-render summaries).  Every subcommand
takes --config; --seed overrides the config seed and --jobs bounds worker
parallelism.
"""

import argparse
import json
import os
import sys

from . import experiment as exp
from .errors import ConfigError, StfuseError
from .pipeline import load_manifest
from .synth import SynthSpec, generate_dataset

_SPEC_FIELDS = {
    "image_size",
    "clip_len",
    "fps",
    "classes",
    "train_clips_per_class",
    "test_clips_per_class",
    "noise_sigma",
    "camera_motion_fraction",
    "drift_speed",
    "motion_speed",
    "blob_radius",
    "clutter",
    "seed",
}


def _load_gen_config(path):
    with open(path) as f:
        doc = json.load(f)
    if "out_dir" not in doc:
        raise ConfigError("out_dir: required field in a gen config")
    out_dir = doc.pop("out_dir")
    for key in doc:
        if key not in _SPEC_FIELDS:
            raise ConfigError(f"{key}: unknown gen config field")
    if "classes" in doc:
        doc["classes"] = tuple(tuple(c) for c in doc["classes"])
    return SynthSpec(**doc), out_dir


def _experiment_config(args):
    cfg = exp.load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.jobs is not None:
        cfg["jobs"] = args.jobs
    return cfg


def _with_stage_inputs(args):
    cfg = _experiment_config(args)
    manifest = load_manifest(cfg["manifest"])
    return cfg, manifest, exp.pipeline_config(cfg)


def cmd_gen(args):
    spec, out_dir = _load_gen_config(args.config)
    if args.seed is not None:
        spec.seed = args.seed
    manifest = generate_dataset(spec, out_dir)
    print(
        f"wrote {len(manifest.train)} train / {len(manifest.test)} test clips "
        f"({manifest.num_classes} classes) to {out_dir}"
    )


def cmd_flow(args):
    cfg, manifest, pcfg = _with_stage_inputs(args)
    exp.stage_flow(manifest, cfg, pcfg)
    print(f"flow cache ready under {pcfg.flow_cache_dir}")


def cmd_train(args):
    cfg, manifest, pcfg = _with_stage_inputs(args)
    nets = exp.stage_train(manifest, cfg, pcfg)
    print(f"trained: {', '.join(sorted(nets))}")


def cmd_fuse(args):
    cfg, manifest, pcfg = _with_stage_inputs(args)
    exp.stage_fuse(manifest, cfg, pcfg)
    print(f"feature dumps written under {os.path.join(cfg['out_dir'], 'features')}")


def cmd_fit_svm(args):
    cfg, manifest, _ = _with_stage_inputs(args)
    models = exp.stage_fit_svm(manifest, cfg)
    print(f"fitted SVMs: {', '.join(sorted(models)) or '(none requested)'}")


def cmd_eval(args):
    cfg, manifest, pcfg = _with_stage_inputs(args)
    reports = exp.stage_eval(manifest, cfg, pcfg)
    print(exp.format_summary_text(reports), end="")


def cmd_experiment(args):
    cfg = _experiment_config(args)
    reports = exp.run_experiment(cfg)
    print(exp.format_summary_text(reports), end="")


def cmd_report(args):
    cfg = _experiment_config(args)
    path = os.path.join(cfg["out_dir"], "reports", "summary.json")
    if not os.path.isfile(path):
        raise ConfigError(f"no summary at {path}; run eval first")
    with open(path) as f:
        doc = json.load(f)
    header = f"{'System':<32s} {'Mean Acc':>6s}"
    print(header)
    print("-" * len(header))
    for name in sorted(doc):
        print(f"{name:<32s} {100.0 * doc[name]['mean_accuracy']:5.1f}%")
        for flag in ("static", "moving"):
            if flag in doc[name]:
                print(f"  {flag:<30s} {100.0 * doc[name][flag]['mean_accuracy']:5.1f}%")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="stfuse", description="two-stream co-occurrence video classification toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen": cmd_gen,
        "flow": cmd_flow,
        "train": cmd_train,
        "fuse": cmd_fuse,
        "fit-svm": cmd_fit_svm,
        "eval": cmd_eval,
        "experiment": cmd_experiment,
        "report": cmd_report,
    }
    for name in commands:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=None, help="worker parallelism bound")
    args = parser.parse_args(argv)
    try:
        commands[args.command](args)
    except StfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
