"""Class-balanced accuracy, confusion matrices and feature dumps.

Accuracy is computed per class as correct/total and averaged over classes
with at least one test clip, so class sizes do not weight the mean.  A
prediction set can carry a camera flag per clip, giving static/moving
sub-reports for the camera-motion study.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyEval, ShapeError
from .tensor import FeatureVector


@dataclass
class EvalReport:
    correct: np.ndarray  # per-class correct counts, length C
    totals: np.ndarray  # per-class clip counts (skipped clips included)
    mean_accuracy: float
    confusion: np.ndarray  # (C, C); rows true class, columns predicted
    excluded_classes: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # (clip_id, class, reason)
    static: "EvalReport" = None
    moving: "EvalReport" = None

    @property
    def num_classes(self):
        return self.totals.size


def _build(predictions, skipped, num_classes):
    correct = np.zeros(num_classes, dtype=np.int64)
    totals = np.zeros(num_classes, dtype=np.int64)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for _, true, pred, _ in predictions:
        totals[true] += 1
        confusion[true, pred] += 1
        if true == pred:
            correct[true] += 1
    errors = []
    for clip_id, true, _, reason in skipped:
        totals[true] += 1  # an unclassifiable clip counts against its class
        errors.append((clip_id, int(true), reason))
    present = totals > 0
    excluded = [int(c) for c in np.flatnonzero(~present)]
    if not present.any():
        raise EmptyEval("no evaluable classes")
    mean = float(np.mean(correct[present] / totals[present]))
    return EvalReport(correct, totals, mean, confusion, excluded, errors)


def evaluate(predictions, num_classes=None, skipped=None, camera_split=True):
    """Aggregate (clip_id, true, predicted, camera) tuples into a report.

    ``skipped`` lists (clip_id, true, camera, reason) for clips no decision
    could be made on; they count as incorrect for their class and appear in
    the report's error list (but not in the confusion matrix, which only
    tallies actual predictions).
    """
    predictions = list(predictions)
    skipped = list(skipped or [])
    if not predictions and not skipped:
        raise EmptyEval("empty prediction list")
    if num_classes is None:
        seen = [t for _, t, _, _ in predictions] + [p for _, _, p, _ in predictions]
        seen += [t for _, t, _, _ in skipped]
        num_classes = max(seen) + 1
    report = _build(predictions, skipped, num_classes)
    if camera_split:
        for flag in ("static", "moving"):
            preds = [p for p in predictions if p[3] == flag]
            skips = [s for s in skipped if s[2] == flag]
            if preds or skips:
                sub = _build(preds, skips, num_classes)
            else:
                sub = None
            setattr(report, flag, sub)
    return report


def report_to_dict(report):
    doc = {
        "mean_accuracy": report.mean_accuracy,
        "per_class": {
            str(c): {"correct": int(report.correct[c]), "total": int(report.totals[c])}
            for c in range(report.num_classes)
            if report.totals[c] > 0
        },
        "confusion": report.confusion.tolist(),
        "excluded_classes": report.excluded_classes,
        "errors": [list(e) for e in report.errors],
    }
    for flag in ("static", "moving"):
        sub = getattr(report, flag)
        if sub is not None:
            doc[flag] = {
                "mean_accuracy": sub.mean_accuracy,
                "per_class": {
                    str(c): {"correct": int(sub.correct[c]), "total": int(sub.totals[c])}
                    for c in range(sub.num_classes)
                    if sub.totals[c] > 0
                },
                "errors": [list(e) for e in sub.errors],
            }
    return doc


def format_report_text(name, report):
    lines = [f"{name:<32s} {100.0 * report.mean_accuracy:5.1f}%"]
    for flag in ("static", "moving"):
        sub = getattr(report, flag)
        if sub is not None:
            lines.append(f"  {flag:<30s} {100.0 * sub.mean_accuracy:5.1f}%")
    if report.excluded_classes:
        lines.append(f"  (classes without test clips excluded: {report.excluded_classes})")
    if report.errors:
        lines.append(f"  ({len(report.errors)} clips could not be classified)")
    return "\n".join(lines)


def format_summary_text(reports):
    """Render {system name: EvalReport} as a fixed-width results table."""
    header = f"{'System':<32s} {'Mean Acc':>6s}"
    rows = [header, "-" * len(header)]
    for name in sorted(reports):
        rows.append(format_report_text(name, reports[name]))
    return "\n".join(rows) + "\n"


def summary_to_json(reports):
    doc = {name: report_to_dict(rep) for name, rep in reports.items()}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def dump_features(features, path):
    """Write (clip_id, class, vector) rows as tab-separated ASCII.

    One line per entry: clip id, class index, then the vector's values with
    9 significant digits.  All vectors must share one length.
    """
    rows = []
    length = None
    for clip_id, cls, vec in features:
        arr = vec.data if isinstance(vec, FeatureVector) else np.asarray(vec)
        arr = np.asarray(arr, dtype=np.float64).reshape(-1)
        if length is None:
            length = arr.size
        elif arr.size != length:
            raise ShapeError(f"feature length {arr.size} != {length} for clip {clip_id}")
        vals = "\t".join(f"{v:.9g}" for v in arr)
        rows.append(f"{clip_id}\t{int(cls)}\t{vals}\n")
    with open(path, "w") as f:
        f.writelines(rows)


def load_features(path):
    """Inverse of dump_features: list of (clip_id, class, float32 array)."""
    out = []
    with open(path) as f:
        for line in f:
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 3:
                continue
            out.append(
                (parts[0], int(parts[1]), np.asarray([float(v) for v in parts[2:]], np.float32))
            )
    return out
