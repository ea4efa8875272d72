"""Frame-wise metrics, segment overlap F1, and detection delay.

Anomaly is the positive class throughout. Metrics whose denominator is
zero are reported as None rather than coerced to 0 or 1. Frame metrics
pool (micro-average) over all runs; segment F1 pools matched/unmatched
segment counts; detection delay is averaged over runs that both contain a
ground-truth anomaly and trigger at least once, with never-triggering
runs surfaced as a miss count instead of a fake delay.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

Segment = tuple[int, int]  # half-open [start, end)


def _confusion(gt: Sequence[int], pred: Sequence[int]) -> tuple[int, int, int, int]:
    if len(gt) != len(pred):
        raise ValueError(f"length mismatch: gt {len(gt)} vs pred {len(pred)}")
    tp = fp = fn = tn = 0
    for g, p in zip(gt, pred):
        g = bool(g)
        p = bool(p)
        if g and p:
            tp += 1
        elif not g and p:
            fp += 1
        elif g and not p:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def _metrics_from_counts(
    tp: int, fp: int, fn: int, tn: int
) -> tuple[float | None, float | None, float | None, float | None]:
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total if total else None
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return accuracy, precision, recall, f1


def frame_metrics(
    gt: Sequence[int], pred: Sequence[int]
) -> tuple[float | None, float | None, float | None, float | None]:
    """(accuracy, precision, recall, f1); None where the denominator is 0."""
    return _metrics_from_counts(*_confusion(gt, pred))


def extract_segments(labels: Sequence[int]) -> list[Segment]:
    """Maximal contiguous anomaly runs as half-open index intervals."""
    segments: list[Segment] = []
    start = None
    for i, v in enumerate(labels):
        if v and start is None:
            start = i
        elif not v and start is not None:
            segments.append((start, i))
            start = None
    if start is not None:
        segments.append((start, len(labels)))
    return segments


def segment_iou(a: Segment, b: Segment) -> float:
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union else 0.0


def match_segments(
    gt_segments: Sequence[Segment],
    pred_segments: Sequence[Segment],
    threshold: float = 0.5,
) -> tuple[int, int, int]:
    """Greedy one-to-one matching; returns (tp, fp, fn) segment counts.

    Predicted segments, in temporal order, each take the still-unmatched
    ground-truth segment of highest IoU; the pair binds only when that IoU
    exceeds the threshold (equal IoUs resolve to the earlier ground-truth
    segment). At threshold 0.5 and above this greedy pass is a maximum
    matching: two disjoint segments cannot both overlap a third by more
    than half its union.
    """
    matched = [False] * len(gt_segments)
    tp = 0
    for p in pred_segments:
        best_iou = 0.0
        best_j = None
        for j, g in enumerate(gt_segments):
            if matched[j]:
                continue
            iou = segment_iou(p, g)
            if iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j is not None and best_iou > threshold:
            matched[best_j] = True
            tp += 1
    fp = len(pred_segments) - tp
    fn = len(gt_segments) - tp
    return tp, fp, fn


def _f1_from_segment_counts(tp: int, fp: int, fn: int) -> float | None:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else None


def f1_at_overlap(
    gt: Sequence[int], pred: Sequence[int], threshold: float = 0.5
) -> float | None:
    """Segment-level F1 at an IoU threshold; None when neither side has segments."""
    if len(gt) != len(pred):
        raise ValueError(f"length mismatch: gt {len(gt)} vs pred {len(pred)}")
    tp, fp, fn = match_segments(extract_segments(gt), extract_segments(pred), threshold)
    return _f1_from_segment_counts(tp, fp, fn)


def detection_delay(
    gt: Sequence[int], pred: Sequence[int], dt_s: float
) -> float | None:
    """Signed seconds from ground-truth onset to first trigger.

    Negative values are early warnings. Returns None when pred never
    triggers; raises when gt contains no anomaly at all.
    """
    if len(gt) != len(pred):
        raise ValueError(f"length mismatch: gt {len(gt)} vs pred {len(pred)}")
    gt_onset = next((i for i, v in enumerate(gt) if v), None)
    if gt_onset is None:
        raise ValueError("ground truth contains no anomaly frame")
    pred_onset = next((i for i, v in enumerate(pred) if v), None)
    if pred_onset is None:
        return None
    return (pred_onset - gt_onset) * dt_s


def segment_delays(
    gt: Sequence[int], pred: Sequence[int], dt_s: float
) -> list[float | None]:
    """Per ground-truth segment: seconds from its start to the first trigger.

    Each segment looks for triggers between the previous segment's end and
    the next segment's start, so a trigger inside another segment's span is
    never credited to this one; None marks a segment whose window never
    triggers.
    """
    segments = extract_segments(gt)
    delays: list[float | None] = []
    for i, (start, _end) in enumerate(segments):
        lo = segments[i - 1][1] if i > 0 else 0
        hi = segments[i + 1][0] if i + 1 < len(segments) else len(gt)
        hit = next((t for t in range(lo, hi) if pred[t]), None)
        delays.append(None if hit is None else (hit - start) * dt_s)
    return delays


@dataclass
class EvalReport:
    """Pooled evaluation of one prediction track over a set of runs."""

    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    f1_at_50: float | None
    mean_delay_s: float | None  # over runs with a defined delay
    mean_segment_delay_s: float | None  # over ground-truth segments with a trigger
    missed_runs: int
    n_runs: int
    n_anomaly_runs: int
    counts: dict[str, int] = field(default_factory=dict)
    per_run: list[dict[str, Any]] = field(default_factory=list)
    averaging: str = "micro"
    iou_threshold: float = 0.5

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "f1_at_50": self.f1_at_50,
            "mean_delay_s": self.mean_delay_s,
            "mean_segment_delay_s": self.mean_segment_delay_s,
            "missed_runs": self.missed_runs,
            "n_runs": self.n_runs,
            "n_anomaly_runs": self.n_anomaly_runs,
            "counts": dict(self.counts),
            "per_run": list(self.per_run),
            "averaging": self.averaging,
            "iou_threshold": self.iou_threshold,
        }


def evaluate(
    runs: Sequence[tuple[Sequence[int], Sequence[int], float]],
    iou_threshold: float = 0.5,
) -> EvalReport:
    """Pool frame, segment, and delay metrics over (gt, pred, dt_s) runs."""
    if not runs:
        raise ValueError("evaluate needs at least one run")
    tp = fp = fn = tn = 0
    seg_tp = seg_fp = seg_fn = 0
    delays: list[float] = []
    seg_delay_values: list[float] = []
    missed = 0
    n_anomaly_runs = 0
    per_run: list[dict[str, Any]] = []
    for gt, pred, dt_s in runs:
        c = _confusion(gt, pred)
        tp += c[0]
        fp += c[1]
        fn += c[2]
        tn += c[3]
        gt_segs = extract_segments(gt)
        pred_segs = extract_segments(pred)
        s = match_segments(gt_segs, pred_segs, iou_threshold)
        seg_tp += s[0]
        seg_fp += s[1]
        seg_fn += s[2]
        entry: dict[str, Any] = {
            "n_frames": len(gt),
            "gt_segments": len(gt_segs),
            "pred_segments": len(pred_segs),
            "delay_s": None,
            "missed": False,
        }
        if gt_segs:
            n_anomaly_runs += 1
            delay = detection_delay(gt, pred, dt_s)
            entry["delay_s"] = delay
            if delay is None:
                missed += 1
                entry["missed"] = True
            else:
                delays.append(delay)
            for d in segment_delays(gt, pred, dt_s):
                if d is not None:
                    seg_delay_values.append(d)
        per_run.append(entry)

    accuracy, precision, recall, f1 = _metrics_from_counts(tp, fp, fn, tn)
    return EvalReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        f1_at_50=_f1_from_segment_counts(seg_tp, seg_fp, seg_fn),
        mean_delay_s=sum(delays) / len(delays) if delays else None,
        mean_segment_delay_s=(
            sum(seg_delay_values) / len(seg_delay_values) if seg_delay_values else None
        ),
        missed_runs=missed,
        n_runs=len(runs),
        n_anomaly_runs=n_anomaly_runs,
        counts={
            "tp": tp,
            "fp": fp,
            "fn": fn,
            "tn": tn,
            "seg_tp": seg_tp,
            "seg_fp": seg_fp,
            "seg_fn": seg_fn,
        },
        per_run=per_run,
        iou_threshold=iou_threshold,
    )


# -- report rendering ------------------------------------------------------


def _cell(value: float | None, scale: float = 100.0, suffix: str = "") -> str:
    if value is None:
        return "-"
    return f"{value * scale:.1f}{suffix}" if scale != 1.0 else f"{value:.2f}{suffix}"


def format_table(reports: dict[str, EvalReport]) -> str:
    """Plain-text table with one row per track (Acc/Pre/Rec/F1/F1@50/Del)."""
    header = ["method", "Acc", "Pre", "Rec", "F1", "F1@50", "Del [s]", "missed"]
    rows = [header]
    for name, r in reports.items():
        rows.append(
            [
                name,
                _cell(r.accuracy),
                _cell(r.precision),
                _cell(r.recall),
                _cell(r.f1),
                _cell(r.f1_at_50),
                _cell(r.mean_delay_s, scale=1.0),
                f"{r.missed_runs}/{r.n_anomaly_runs}",
            ]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
    return "\n".join(lines)


def save_report(
    reports: dict[str, EvalReport], path, meta: dict[str, Any] | None = None
) -> None:
    obj: dict[str, Any] = {
        "format": "eval-report",
        "version": 1,
        "tracks": {k: r.to_json_dict() for k, r in reports.items()},
    }
    if meta is not None:
        obj["meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")
