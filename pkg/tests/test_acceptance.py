"""Acceptance suite: one test per acceptance criterion.

Each test prints a single "ACCEPTANCE <name>: PASS/FAIL" line (visible with
pytest -s) and asserts the criterion at its stated tolerance.  The trend
criteria run the full pipeline on freshly generated synthetic datasets with
fixed seeds; tolerances and thresholds are pinned here, not tuned at run
time.
"""

import hashlib
import json
import os
import time

import numpy as np
import pytest

from helpers import loop_cooccurrence_max, safe_gradcheck_instance
from stfuse.convnet import LayerSpec, check_gradients
from stfuse.errors import EmptyDecisions
from stfuse.evaluate import evaluate
from stfuse.experiment import run_experiment
from stfuse.fusion import cooccurrence_raw
from stfuse.optflow import compute_flow
from stfuse.pipeline import ClipRecord, flow_pairs, sample_frames, sliding_windows
from stfuse.synth import SynthSpec, generate_dataset


def _verdict(name, ok, detail):
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line, flush=True)
    assert ok, line


def _run(tmp_path, tag, spec, systems, seed, **config_over):
    data_dir = tmp_path / f"data_{tag}"
    generate_dataset(spec, data_dir)
    cfg = {
        "manifest": str(data_dir / "manifest.json"),
        "out_dir": str(tmp_path / f"run_{tag}"),
        "systems": list(systems),
        "seed": seed,
    }
    cfg.update(config_over)
    return run_experiment(cfg)


class TestOrderingReproduction:
    def test_ordering_reproduction(self, tmp_path):
        """Fusion beats both single streams; co-occurrence reaches 90%."""
        start = time.time()
        systems = ["spatial_only", "temporal_only", "early_fusion", "late_fusion", "cooccurrence"]
        reports = _run(tmp_path, "ordering", SynthSpec(seed=7), systems, seed=7)
        acc = {name: rep.mean_accuracy for name, rep in reports.items()}
        elapsed = time.time() - start
        streams = max(acc["spatial_only"], acc["temporal_only"])
        ok = (
            acc["spatial_only"] <= 0.60
            and acc["temporal_only"] <= 0.60
            and acc["cooccurrence"] >= 0.90
            and all(acc[s] > streams for s in ("early_fusion", "late_fusion", "cooccurrence"))
            and elapsed <= 900.0
        )
        detail = (
            f"spatial {100*acc['spatial_only']:.1f}%, temporal {100*acc['temporal_only']:.1f}%, "
            f"early {100*acc['early_fusion']:.1f}%, late {100*acc['late_fusion']:.1f}%, "
            f"cooc {100*acc['cooccurrence']:.1f}%, {elapsed:.0f}s"
        )
        _verdict("ordering-reproduction", ok, detail)


class TestBoundingBoxTrend:
    def test_bbox_trend(self, tmp_path):
        """With heavy clutter, the bbox variant is at least as accurate."""
        deltas = []
        pairs = []
        for seed in (1, 2, 3):
            spec = SynthSpec(
                seed=seed, clutter=6, train_clips_per_class=12, test_clips_per_class=6
            )
            reports = _run(
                tmp_path, f"bbox{seed}", spec, ["cooccurrence", "cooccurrence_bbox"], seed=seed
            )
            a = reports["cooccurrence"].mean_accuracy
            b = reports["cooccurrence_bbox"].mean_accuracy
            deltas.append(b - a)
            pairs.append(f"seed{seed} {100*a:.1f}->{100*b:.1f}")
        mean_delta = float(np.mean(deltas))
        _verdict(
            "bounding-box-trend",
            mean_delta >= 0.0,
            f"mean bbox gain {100*mean_delta:+.1f} pts over 3 seeds ({'; '.join(pairs)})",
        )


class TestZeroCenteringAblation:
    def test_zero_centering_ablation(self, tmp_path):
        """Mean subtraction helps the temporal stream on moving-camera clips."""
        deltas = []
        rows = []
        for seed in (1, 2, 3):
            spec = SynthSpec(
                seed=seed,
                camera_motion_fraction=0.5,
                drift_speed=0.5,
                train_clips_per_class=12,
                test_clips_per_class=10,
            )
            moving = {}
            for centered in (True, False):
                reports = _run(
                    tmp_path,
                    f"abl{seed}_{'zc' if centered else 'nzc'}",
                    spec,
                    ["temporal_only"],
                    seed=seed,
                    sampling={"flow_stride": 2},
                    ablation={"zero_center_temporal": centered},
                )
                moving[centered] = reports["temporal_only"].moving.mean_accuracy
            deltas.append(moving[True] - moving[False])
            rows.append(f"seed{seed} {100*moving[True]:.0f} vs {100*moving[False]:.0f}")
        mean_delta = float(np.mean(deltas))
        _verdict(
            "zero-centering-ablation",
            mean_delta >= 0.0,
            f"moving-camera gain {100*mean_delta:+.1f} pts over 3 seeds ({'; '.join(rows)})",
        )


class TestBilinearOracle:
    def test_bilinear_oracle_equivalence(self):
        """Vectorised co-occurrence equals the brute-force triple loop."""
        worst = 0.0
        count = 0
        for seed in range(120):
            rng = np.random.default_rng(seed)
            h, w, d = int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 9))
            s = rng.uniform(-1, 1, (h, w, d)).astype(np.float32)
            t = rng.uniform(-1, 1, (h, w, d)).astype(np.float32)
            err = float(np.abs(cooccurrence_raw(s, t) - loop_cooccurrence_max(s, t)).max())
            worst = max(worst, err)
            count += 1
        _verdict(
            "bilinear-oracle-equivalence",
            count >= 100 and worst < 1e-6,
            f"{count} instances, max pre-normalisation error {worst:.2e}",
        )


class TestGradientChecks:
    def test_gradient_checks_all_layer_kinds(self):
        """conv2d, conv3d, fc, pooling and softmax+CE all pass gradcheck."""
        specs_2d = [
            LayerSpec("conv2d", "c1", kernel=(3, 3), out_channels=3),
            LayerSpec("relu", "r1"),
            LayerSpec("maxpool2d", "p1", kernel=(2, 2)),
            LayerSpec("fully_connected", "fc6", out_channels=5),
            LayerSpec("relu", "r6"),
            LayerSpec("fully_connected", "fc8", out_channels=3),
            LayerSpec("softmax", "o"),
        ]
        specs_3d = [
            LayerSpec("conv3d", "c1", kernel=(2, 3, 3), out_channels=2),
            LayerSpec("relu", "r1"),
            LayerSpec("maxpool3d", "p1", kernel=(2, 2, 2)),
            LayerSpec("fully_connected", "fc8", out_channels=3),
            LayerSpec("softmax", "o"),
        ]
        worst = 0.0
        runs = 0
        for seed in range(10):
            for shape, specs in (((6, 6, 2), specs_2d), ((4, 6, 6, 2), specs_3d)):
                net, x, target = safe_gradcheck_instance(shape, specs, base_seed=seed * 31)
                worst = max(worst, check_gradients(net, x, target, eps=1e-3))
                runs += 1
        _verdict(
            "gradient-checks",
            runs == 20 and worst < 1e-3,
            f"{runs} nets over 10 seeds, worst relative error {worst:.2e}",
        )


class TestFlowAccuracy:
    def test_flow_accuracy(self):
        """Unit translations recovered under 0.2 px AEE; identical frames still."""

        def blob(cx, cy, size=32, sigma=5.0):
            yy, xx = np.mgrid[0:size, 0:size].astype(float)
            return 0.8 * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))

        worst_aee = 0.0
        for dx, dy in [(1, 0), (-1, 0), (0, 1), (0, -1)]:
            flow = compute_flow(blob(15.5, 15.5), blob(15.5 + dx, 15.5 + dy))
            worst_aee = max(worst_aee, float(np.mean(np.hypot(flow.u - dx, flow.v - dy))))
        img = blob(14.0, 17.0) + 0.1
        still = compute_flow(img, img)
        still_max = float(np.hypot(still.u, still.v).max())
        _verdict(
            "flow-accuracy",
            worst_aee < 0.2 and still_max < 1e-3,
            f"worst AEE {worst_aee:.3f} px, identical-frame max {still_max:.1e} px",
        )


class TestCountingFormulas:
    def test_counting_formulas(self):
        """Window, pair and sampling counts match their closed forms."""

        def clip(n, fps=30.0):
            return ClipRecord("c", 0, fps, [f"f{i}" for i in range(n)])

        ok = all(
            len(sliding_windows(clip(n), 15)) == n - 14 for n in range(15, 31)
        )
        rng = np.random.default_rng(17)
        for _ in range(50):
            n = int(rng.integers(1, 300))
            fps = float(rng.integers(5, 61))
            delta = int(rng.integers(1, 10))
            rate = float(rng.uniform(1.0, fps))
            ok = ok and len(flow_pairs(clip(n), delta)) == (n - 1) // delta
            stride = int(np.floor(fps / rate + 0.5))
            expected = (n + stride - 1) // stride
            ok = ok and len(sample_frames(clip(n, fps), "fixed_rate", rate=rate)) == expected
        _verdict("counting-formulas", ok, "window N-14 over N=15..30, 50 random pair/sample combos")


class TestMetricCorrectness:
    def test_metric_correctness(self):
        """Hand-computed mean accuracies reproduced exactly."""
        crafted = [
            # (rows, expected mean accuracy)
            ([(0, 0), (0, 0), (1, 0), (1, 0)], 0.5),
            ([(0, 0), (0, 1), (1, 1), (1, 1), (2, 0)], (0.5 + 1.0 + 0.0) / 3),
            ([(0, 0), (1, 1), (2, 2)], 1.0),
            ([(0, 1), (1, 2), (2, 0)], 0.0),
            ([(0, 0), (0, 0), (0, 1), (1, 1), (2, 2), (2, 0), (2, 2)], (2 / 3 + 1.0 + 2 / 3) / 3),
        ]
        ok = True
        for rows, want in crafted:
            preds = [(f"c{i}", t, p, "static") for i, (t, p) in enumerate(rows)]
            got = evaluate(preds).mean_accuracy
            ok = ok and got == pytest.approx(want, abs=1e-12)
        # class-duplication invariance
        base = [(f"c{i}", t, p, "static") for i, (t, p) in enumerate([(0, 0), (0, 1), (1, 1)])]
        dup = base + [(f"d{i}", 0, p, "static") for i, (_, _, p, _) in enumerate(base[:2])]
        ok = ok and abs(evaluate(base).mean_accuracy - evaluate(dup).mean_accuracy) < 1e-9
        _verdict("metric-correctness", ok, "5 crafted sets exact, duplication invariant")


class TestPipelineDeterminism:
    def test_experiment_determinism(self, tmp_path):
        """Same config and seed twice gives byte-identical summary JSON."""
        spec = SynthSpec(train_clips_per_class=3, test_clips_per_class=2, seed=5)
        data_dir = tmp_path / "data"
        generate_dataset(spec, data_dir)
        digests = []
        for run in ("one", "two"):
            cfg = {
                "manifest": str(data_dir / "manifest.json"),
                "out_dir": str(tmp_path / run),
                "systems": ["spatial_only", "cooccurrence"],
                "seed": 5,
                "training": {"epochs": 5},
            }
            run_experiment(cfg)
            blob = (tmp_path / run / "reports" / "summary.json").read_bytes()
            digests.append(hashlib.sha256(blob).hexdigest())
        _verdict(
            "pipeline-determinism",
            digests[0] == digests[1],
            f"summary sha256 {digests[0][:12]} both runs",
        )
