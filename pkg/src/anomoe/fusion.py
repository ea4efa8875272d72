"""Winner-takes-all expert fusion and the causal majority filter.

Fusion keeps the prediction of the more confident expert; an exact
confidence tie goes to the classifier expert. The majority filter smooths
each track's raw stream with a sliding window (default eight steps): a
frame is anomalous when strictly more than half of the window says so,
and an exact split keeps the previous filtered output.

The mixture-of-experts track is fused from raw verdicts first and
filtered afterwards, exactly like the single-expert tracks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

from anomoe.classifier import (
    ClassDistribution,
    absent_classifier_verdict,
    classifier_verdict,
)
from anomoe.data import Run
from anomoe.errors import AlignmentError, DataFormatError
from anomoe.gmm import GmmModel
from anomoe.gmr import ANOMALY, NO_ANOMALY, ExpertVerdict, gmr_verdicts
from anomoe.phase import ExpectedStateSchedule, PhaseConfig, canonical_phase

TRACKS = ("gmr", "vlm", "moe")

WINNER_GMR = "gmr"
WINNER_VLM = "vlm"


def fuse(gmr: ExpertVerdict, vlm: ExpertVerdict) -> ExpertVerdict:
    """Keep the more confident expert's prediction; ties go to vlm."""
    if gmr.confidence > vlm.confidence:
        winner, winning = WINNER_GMR, gmr
    else:
        winner, winning = WINNER_VLM, vlm
    return ExpertVerdict(
        prediction=winning.prediction,
        confidence=winning.confidence,
        expert=winning.expert,
        detail={"winner": winner, "c_gmr": gmr.confidence, "c_vlm": vlm.confidence},
    )


def majority_filter(predictions: Sequence[int], window: int = 8) -> list[int]:
    """Causal strict-majority smoothing with tie retention.

    ``predictions`` is a 0/1 sequence (1 = anomaly). Frame t looks at the
    last min(t+1, window) raw values; the output is 1 on a strict
    majority, 0 on a strict minority, and repeats output[t-1] on an exact
    split (a split at t = 0 gives 0).
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    out: list[int] = []
    count = 0  # anomalies inside the current window
    for t, p in enumerate(predictions):
        p = int(bool(p))
        count += p
        if t >= window:
            count -= int(bool(predictions[t - window]))
        width = min(t + 1, window)
        if 2 * count > width:
            out.append(1)
        elif 2 * count < width:
            out.append(0)
        else:
            out.append(out[t - 1] if t > 0 else 0)
    return out


@dataclass
class PipelineConfig:
    """Settings of the per-run detection pipeline."""

    window: int = 8
    phase_config: PhaseConfig | None = None  # fallback when frames carry no phase


@dataclass
class PipelineResult:
    """All per-frame outputs of one run through the detector."""

    indices: list[int]
    gmr_verdicts: list[ExpertVerdict]
    vlm_verdicts: list[ExpertVerdict]
    fused_verdicts: list[ExpertVerdict]
    raw: dict[str, list[int]] = field(default_factory=dict)  # track -> 0/1 stream
    filtered: dict[str, list[int]] = field(default_factory=dict)

    def records(self) -> list[dict[str, Any]]:
        """Frame records in the fused JSONL layout."""
        out = []
        for i, index in enumerate(self.indices):
            fused = self.fused_verdicts[i]
            detail = fused.detail or {}
            out.append(
                {
                    "index": index,
                    "gmr": _label(self.filtered["gmr"][i]),
                    "vlm": _label(self.filtered["vlm"][i]),
                    "moe": _label(self.filtered["moe"][i]),
                    "winner": detail.get("winner"),
                    "c_gmr": self.gmr_verdicts[i].confidence,
                    "c_vlm": self.vlm_verdicts[i].confidence,
                    "raw": {
                        "gmr": _label(self.raw["gmr"][i]),
                        "vlm": _label(self.raw["vlm"][i]),
                        "moe": _label(self.raw["moe"][i]),
                    },
                }
            )
        return out


def _label(flag: int) -> str:
    return ANOMALY if flag else NO_ANOMALY


def _frame_phase(frame, config: PipelineConfig) -> float:
    if frame.phase is not None:
        return frame.phase
    if config.phase_config is not None:
        return canonical_phase(frame.time_s, config.phase_config)
    raise AlignmentError(
        f"frame {frame.index} carries no phase and no phase settings were given"
    )


def run_pipeline(
    model: GmmModel,
    schedule: ExpectedStateSchedule,
    run: Run,
    probs: dict[int, ClassDistribution],
    config: PipelineConfig | None = None,
) -> PipelineResult:
    """Run both experts plus fusion over one run and filter every track.

    ``probs`` maps frame index to the classifier's distribution; frames
    missing from it get a zero-confidence placeholder verdict so the
    probabilistic expert decides alone there.
    """
    config = config or PipelineConfig()
    gmr_vs = gmr_verdicts(model, run.frames)
    vlm_vs: list[ExpertVerdict] = []
    for frame in run.frames:
        dist = probs.get(frame.index)
        if dist is None:
            vlm_vs.append(absent_classifier_verdict())
        else:
            s = _frame_phase(frame, config)
            vlm_vs.append(classifier_verdict(dist, schedule, s))
    fused = [fuse(g, v) for g, v in zip(gmr_vs, vlm_vs)]

    raw = {
        "gmr": [int(v.is_anomaly) for v in gmr_vs],
        "vlm": [int(v.is_anomaly) for v in vlm_vs],
        "moe": [int(v.is_anomaly) for v in fused],
    }
    filtered = {t: majority_filter(raw[t], config.window) for t in TRACKS}
    return PipelineResult(
        indices=[f.index for f in run.frames],
        gmr_verdicts=gmr_vs,
        vlm_verdicts=vlm_vs,
        fused_verdicts=fused,
        raw=raw,
        filtered=filtered,
    )


# -- fused stream I/O ------------------------------------------------------


def write_fused_stream(
    result: PipelineResult, path, meta: dict[str, Any] | None = None
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if meta is not None:
            header = {"format": "fused-stream", "version": 1, "meta": meta}
            fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for rec in result.records():
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_fused_stream(path) -> list[dict[str, Any]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            if "format" in rec and "index" not in rec:
                continue  # metadata header
            if "index" not in rec:
                raise DataFormatError(f"{path}: line {lineno}: record has no index")
            out.append(rec)
    return out
