"""Probabilistic anomaly expert: deviation ratios and sigmoid confidences.

Per frame, the expert picks the responsible mixture component from the
input features, predicts the output block by conditioning, and measures
each modality's Mahalanobis deviation against the calibrated ceiling for
that component. The ratio eps = D / D_max drives both the binary call
(anomaly iff eps > 1; the boundary itself is normal) and a sigmoid
confidence, with sigma(x) = 1/(1 + e^x) so that both branches read:

    anomaly:    C = 1 / (1 + e^(-alpha (eps - 1)))
    no anomaly: C = 1 / (1 + e^(+alpha (eps - 1)))

Both branches give exactly 0.5 at eps = 1 and at alpha = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.linalg import cho_factor, solve_triangular

from anomoe.data import Frame, validate_frame
from anomoe.gmm import GmmModel, modality_deviations, require_calibrated

ANOMALY = "anomaly"
NO_ANOMALY = "no_anomaly"
PREDICTIONS = (ANOMALY, NO_ANOMALY)

EXPERT_GMR = "gmr"
EXPERT_CLASSIFIER = "classifier"

# open-interval bounds: confidences never print as exactly 0 or 1
_CONF_MIN = 5e-324
_CONF_MAX = math.nextafter(1.0, 0.0)


@dataclass
class ExpertVerdict:
    """One expert's per-frame call."""

    prediction: str
    confidence: float
    expert: str
    detail: dict[str, Any] | None = None

    def __post_init__(self):
        if self.prediction not in PREDICTIONS:
            raise ValueError(f"prediction must be one of {PREDICTIONS}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def is_anomaly(self) -> bool:
        return self.prediction == ANOMALY


def mahalanobis(x: np.ndarray, mean: np.ndarray, covariance: np.ndarray) -> float:
    """sqrt((x - mean)^T covariance^-1 (x - mean)) via Cholesky."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    L, _ = cho_factor(covariance, lower=True)
    y = solve_triangular(L, x - mean, lower=True, check_finite=False)
    return float(np.sqrt(y @ y))


def epsilon_ratio(d: float, d_max: float) -> float:
    """Deviation ratio d / d_max; an infinite ceiling yields 0."""
    if d < 0:
        raise ValueError(f"distance must be >= 0, got {d}")
    if math.isinf(d_max):
        return 0.0
    if d_max <= 0:
        raise ValueError(f"d_max must be positive or infinite, got {d_max}")
    return d / d_max


def _sigmoid(x: float) -> float:
    """1 / (1 + e^x), overflow-safe, clamped inside the open interval (0,1)."""
    if x >= 0:
        t = math.exp(-x)
        v = t / (1.0 + t)
    else:
        v = 1.0 / (1.0 + math.exp(x))
    return min(max(v, _CONF_MIN), _CONF_MAX)


def gmr_confidence(eps: float, alpha: float) -> tuple[str, float]:
    """Binary prediction and confidence for one deviation ratio."""
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    x = alpha * (eps - 1.0)
    if eps > 1.0:
        return ANOMALY, _sigmoid(-x)
    return NO_ANOMALY, _sigmoid(x)


def _aggregate(per_modality: dict[str, dict[str, Any]], component: int) -> ExpertVerdict:
    anomalous = [m for m, d in per_modality.items() if d["prediction"] == ANOMALY]
    if anomalous:
        prediction = ANOMALY
        confidence = max(per_modality[m]["confidence"] for m in anomalous)
    else:
        prediction = NO_ANOMALY
        confidence = max(d["confidence"] for d in per_modality.values())
    return ExpertVerdict(
        prediction=prediction,
        confidence=confidence,
        expert=EXPERT_GMR,
        detail={"component": component, "modalities": per_modality},
    )


def gmr_verdicts(model: GmmModel, frames: Sequence[Frame]) -> list[ExpertVerdict]:
    """Verdicts for a batch of frames in one sweep.

    Uses the same batched pass as calibration, so calibration frames
    reproduce their recorded maxima exactly and come back normal.
    """
    require_calibrated(model)
    for frame in frames:
        validate_frame(frame, model.schema)
    if not frames:
        return []
    X = np.stack([f.full_vector(model.schema) for f in frames])
    assigned, devs = modality_deviations(model, X)
    assert model.thresholds is not None
    verdicts = []
    for i in range(len(frames)):
        k = int(assigned[i])
        per_modality: dict[str, dict[str, Any]] = {}
        for m in model.schema.modalities:
            d = float(devs[m][i])
            d_max = float(model.thresholds[m][k])
            eps = epsilon_ratio(d, d_max)
            prediction, confidence = gmr_confidence(eps, model.alpha)
            per_modality[m] = {
                "d": d,
                "d_max": d_max,
                "epsilon": eps,
                "prediction": prediction,
                "confidence": confidence,
            }
        verdicts.append(_aggregate(per_modality, k))
    return verdicts


def gmr_verdict(model: GmmModel, frame: Frame) -> ExpertVerdict:
    """Verdict for a single frame."""
    return gmr_verdicts(model, [frame])[0]


# -- verdict stream encoding ----------------------------------------------


def verdict_to_json_dict(index: int, verdict: ExpertVerdict) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "index": index,
        "expert": verdict.expert,
        "prediction": verdict.prediction,
        "confidence": verdict.confidence,
    }
    if verdict.detail is not None:
        detail = dict(verdict.detail)
        if "modalities" in detail:
            mods = {}
            for m, entry in detail["modalities"].items():
                entry = dict(entry)
                if math.isinf(entry.get("d_max", 0.0)):
                    entry["d_max"] = None
                mods[m] = entry
            detail["modalities"] = mods
        obj["detail"] = detail
    return obj


def verdict_from_json_dict(obj: dict[str, Any]) -> tuple[int, ExpertVerdict]:
    detail = obj.get("detail")
    if detail is not None and "modalities" in detail:
        for entry in detail["modalities"].values():
            if entry.get("d_max") is None:
                entry["d_max"] = math.inf
    return int(obj["index"]), ExpertVerdict(
        prediction=obj["prediction"],
        confidence=float(obj["confidence"]),
        expert=obj["expert"],
        detail=detail,
    )


def replay_is_clean(model: GmmModel, frames: Iterable[Frame]) -> bool:
    """True when every frame comes back normal (calibration-set check)."""
    return all(not v.is_anomaly for v in gmr_verdicts(model, list(frames)))
