"""Mixture-of-experts anomaly detection for multimodal robot-skill time series.

A probabilistic expert (Gaussian mixture regression with per-modality
deviation thresholds) and a classifier-grounding expert (phase-scheduled
semantic state checks) are fused per frame by confidence; the fused and
single-expert tracks are majority-filtered and scored with frame, segment,
and delay metrics. A deterministic scenario generator provides synthetic
skills with scripted anomalies for end-to-end evaluation.
"""

__version__ = "0.1.0"

from anomoe.backend import BACKEND_NAME
from anomoe.classifier import ClassDistribution, classifier_verdict
from anomoe.data import FeatureSchema, Frame, Run, SkillDataset, load_dataset, save_dataset
from anomoe.fusion import PipelineConfig, fuse, majority_filter, run_pipeline
from anomoe.gmm import (
    EmConfig,
    GmmModel,
    calibrate_thresholds,
    condition,
    fit_em,
    load_model,
    save_model,
)
from anomoe.gmr import ANOMALY, NO_ANOMALY, ExpertVerdict, gmr_verdict, gmr_verdicts
from anomoe.metrics import EvalReport, evaluate, f1_at_overlap, frame_metrics
from anomoe.phase import ExpectedStateSchedule, PhaseConfig, canonical_phase
from anomoe.scenarios import ScenarioSpec, generate_run, generate_suite, load_suite

__all__ = [
    "__version__",
    "BACKEND_NAME",
    "ANOMALY",
    "NO_ANOMALY",
    "ClassDistribution",
    "classifier_verdict",
    "FeatureSchema",
    "Frame",
    "Run",
    "SkillDataset",
    "load_dataset",
    "save_dataset",
    "PipelineConfig",
    "fuse",
    "majority_filter",
    "run_pipeline",
    "EmConfig",
    "GmmModel",
    "calibrate_thresholds",
    "condition",
    "fit_em",
    "load_model",
    "save_model",
    "ExpertVerdict",
    "gmr_verdict",
    "gmr_verdicts",
    "EvalReport",
    "evaluate",
    "f1_at_overlap",
    "frame_metrics",
    "ExpectedStateSchedule",
    "PhaseConfig",
    "canonical_phase",
    "ScenarioSpec",
    "generate_run",
    "generate_suite",
    "load_suite",
]
