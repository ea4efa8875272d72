"""Classifier-based anomaly expert.

Consumes per-frame probability distributions over the semantic states
{pre, effect, unsatisfied} (produced upstream by any frame classifier)
and grounds them against the phase schedule: the argmax class is normal
when it belongs to the allowed set g(s), and the confidence is

    normal:  C = max_x O(x) / |g(s)|
    anomaly: C = sum of O(x) over classes x outside g(s)

so confidence is deliberately damped inside transition windows where
several states are acceptable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from anomoe.data import CLASS_LABELS
from anomoe.errors import DataFormatError
from anomoe.gmr import ANOMALY, EXPERT_CLASSIFIER, NO_ANOMALY, ExpertVerdict
from anomoe.phase import ExpectedStateSchedule, expected_labels

_SUM_TOL = 1e-6


@dataclass
class ClassDistribution:
    p_pre: float
    p_effect: float
    p_unsatisfied: float

    def __post_init__(self):
        probs = self.as_tuple()
        if any(p < 0 for p in probs):
            raise ValueError(f"negative probability in {probs}")
        if abs(sum(probs) - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities {probs} sum to {sum(probs):.8f}, expected 1")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.p_pre, self.p_effect, self.p_unsatisfied)

    def argmax_label(self) -> str:
        """Most probable class; ties resolve in CLASS_LABELS order."""
        probs = self.as_tuple()
        best = max(range(len(probs)), key=lambda i: (probs[i], -i))
        return CLASS_LABELS[best]

    def prob(self, label: str) -> float:
        return self.as_tuple()[CLASS_LABELS.index(label)]


def classifier_verdict(
    dist: ClassDistribution, schedule: ExpectedStateSchedule, s: float
) -> ExpertVerdict:
    """Ground one class distribution at phase s."""
    allowed = expected_labels(schedule, s)
    predicted = dist.argmax_label()
    if predicted in allowed:
        prediction = NO_ANOMALY
        confidence = max(dist.as_tuple()) / len(allowed)
    else:
        prediction = ANOMALY
        confidence = sum(dist.prob(x) for x in CLASS_LABELS if x not in allowed)
    return ExpertVerdict(
        prediction=prediction,
        confidence=confidence,
        expert=EXPERT_CLASSIFIER,
        detail={
            "predicted_label": predicted,
            "allowed": sorted(allowed),
            "phase": s,
            "probs": list(dist.as_tuple()),
        },
    )


def absent_classifier_verdict() -> ExpertVerdict:
    """Placeholder for frames with no classifier output; never wins fusion."""
    return ExpertVerdict(
        prediction=NO_ANOMALY,
        confidence=0.0,
        expert=EXPERT_CLASSIFIER,
        detail={"absent": True},
    )


# -- probability stream I/O ------------------------------------------------


def load_probability_stream(path) -> dict[int, ClassDistribution]:
    """Read a JSONL stream of ``{"index": n, "probs": [p, p, p]}`` records.

    Returns a map from frame index to distribution; indices may be sparse.
    """
    out: dict[int, ClassDistribution] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            try:
                index = int(obj["index"])
                probs = obj["probs"]
                dist = ClassDistribution(float(probs[0]), float(probs[1]), float(probs[2]))
            except (KeyError, TypeError, ValueError, IndexError) as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
            if index in out:
                raise DataFormatError(f"{path}: line {lineno}: duplicate index {index}")
            out[index] = dist
    return out


def save_probability_stream(stream: dict[int, ClassDistribution], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for index in sorted(stream):
            obj: dict[str, Any] = {
                "index": index,
                "probs": [float(p) for p in stream[index].as_tuple()],
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
