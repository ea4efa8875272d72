import itertools

import numpy as np
import pytest

from anomoe.classifier import ClassDistribution
from anomoe.data import Frame, Run
from anomoe.errors import AlignmentError
from anomoe.fusion import (
    PipelineConfig,
    fuse,
    majority_filter,
    read_fused_stream,
    run_pipeline,
    write_fused_stream,
)
from anomoe.gmr import ANOMALY, NO_ANOMALY, ExpertVerdict
from anomoe.phase import ExpectedStateSchedule, PhaseConfig, ScheduleInterval

from _helpers import toy_trained_model


def v(pred, conf, expert="gmr"):
    return ExpertVerdict(prediction=pred, confidence=conf, expert=expert)


def brute_majority(preds, window):
    out = []
    for t in range(len(preds)):
        lo = max(0, t - window + 1)
        votes = [int(bool(p)) for p in preds[lo : t + 1]]
        width = len(votes)
        ones = sum(votes)
        if 2 * ones > width:
            out.append(1)
        elif 2 * ones < width:
            out.append(0)
        else:
            out.append(out[t - 1] if t > 0 else 0)
    return out


def test_fuse_keeps_more_confident_expert():
    g = v(ANOMALY, 0.9, "gmr")
    c = v(NO_ANOMALY, 0.4, "classifier")
    fused = fuse(g, c)
    assert fused.prediction == ANOMALY
    assert fused.confidence == 0.9
    assert fused.detail["winner"] == "gmr"
    assert fused.detail["c_gmr"] == 0.9
    assert fused.detail["c_vlm"] == 0.4

    fused = fuse(v(NO_ANOMALY, 0.3, "gmr"), v(ANOMALY, 0.8, "classifier"))
    assert fused.prediction == ANOMALY
    assert fused.detail["winner"] == "vlm"


def test_fuse_tie_goes_to_classifier():
    fused = fuse(v(ANOMALY, 0.7, "gmr"), v(NO_ANOMALY, 0.7, "classifier"))
    assert fused.prediction == NO_ANOMALY
    assert fused.detail["winner"] == "vlm"
    assert fused.expert == "classifier"


def test_fuse_truth_table():
    preds = (ANOMALY, NO_ANOMALY)
    for pg, pv in itertools.product(preds, preds):
        for cg, cv in [(0.9, 0.2), (0.2, 0.9), (0.5, 0.5)]:
            fused = fuse(v(pg, cg, "gmr"), v(pv, cv, "classifier"))
            expect = pg if cg > cv else pv
            assert fused.prediction == expect
            assert fused.confidence == max(cg, cv)


def test_fuse_agreement_passes_through():
    rng = np.random.default_rng(0)
    for _ in range(500):
        pred = ANOMALY if rng.random() < 0.5 else NO_ANOMALY
        cg, cv = rng.random(), rng.random()
        fused = fuse(v(pred, cg, "gmr"), v(pred, cv, "classifier"))
        assert fused.prediction == pred


def test_majority_filter_examples():
    assert majority_filter([0] * 10) == [0] * 10
    assert majority_filter([1] * 10) == [1] * 10
    # 5 of 8 anomalous flips on, 4 of 8 holds the previous value
    stream = [1, 1, 1, 1, 1, 0, 0, 0]
    assert majority_filter(stream, window=8)[-1] == 1
    stream = [1, 1, 1, 1, 0, 0, 0, 0]
    filt = majority_filter(stream, window=8)
    # split at t=7 repeats the t=6 output, which was still a majority of 1s
    assert filt[-1] == filt[-2]


def test_majority_filter_window_one_is_identity():
    rng = np.random.default_rng(1)
    stream = list((rng.random(50) < 0.4).astype(int))
    assert majority_filter(stream, window=1) == stream


def test_majority_filter_warmup_uses_truncated_window():
    # at t=0 a single anomaly is already a strict majority of one
    assert majority_filter([1, 0, 0], window=8)[0] == 1
    # t=1 split (1 of 2) repeats t=0
    assert majority_filter([1, 0, 0, 0], window=8)[1] == 1
    assert majority_filter([0, 1], window=8) == [0, 0]


def test_majority_filter_tie_at_origin_is_normal():
    assert majority_filter([1, 1, 0, 0], window=4) == [1, 1, 1, 1]
    assert majority_filter([0, 1], window=2) == [0, 0]


def test_majority_filter_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(300):
        n = int(rng.integers(1, 40))
        window = int(rng.integers(1, 12))
        stream = list((rng.random(n) < rng.random()).astype(int))
        assert majority_filter(stream, window) == brute_majority(stream, window)


def test_majority_filter_is_causal():
    rng = np.random.default_rng(3)
    stream = list((rng.random(30) < 0.5).astype(int))
    full = majority_filter(stream, window=5)
    for cut in range(1, 31):
        assert majority_filter(stream[:cut], window=5) == full[:cut]


def test_majority_filter_rejects_bad_window():
    with pytest.raises(ValueError):
        majority_filter([0, 1], window=0)


def schedule_all_pre():
    return ExpectedStateSchedule(
        intervals=(ScheduleInterval(0.0, 1.0, frozenset({"pre"})),)
    )


def test_run_pipeline_clean_run_is_all_normal():
    model, dataset = toy_trained_model(seed=0)
    run = dataset.runs[0]
    probs = {f.index: ClassDistribution(1.0, 0.0, 0.0) for f in run.frames}
    config = PipelineConfig(window=8, phase_config=PhaseConfig(tau=30.0, alpha_s=2.0))
    result = run_pipeline(model, schedule_all_pre(), run, probs, config)
    for track in ("gmr", "vlm", "moe"):
        assert result.raw[track] == [0] * len(run.frames)
        assert result.filtered[track] == [0] * len(run.frames)
    assert all(r["winner"] in ("gmr", "vlm") for r in result.records())


def test_run_pipeline_classifier_detects_semantic_fault():
    """Confident wrong-state classifier output must flip the fused track."""
    model, dataset = toy_trained_model(seed=1)
    run = dataset.runs[0]
    probs = {}
    for f in run.frames:
        if f.index >= 200:
            # anomalous mass 0.996 beats any normal gmr confidence at alpha 5
            probs[f.index] = ClassDistribution(0.004, 0.006, 0.99)
        else:
            probs[f.index] = ClassDistribution(0.96, 0.02, 0.02)
    config = PipelineConfig(window=8, phase_config=PhaseConfig(tau=30.0, alpha_s=2.0))
    result = run_pipeline(model, schedule_all_pre(), run, probs, config)
    assert sum(result.raw["gmr"]) == 0
    assert all(result.raw["vlm"][i] == 1 for i in range(200, len(run.frames)))
    # classifier is the more confident side there, so moe follows it
    assert all(result.raw["moe"][i] == 1 for i in range(200, len(run.frames)))
    assert sum(result.filtered["moe"][:200]) == 0
    assert result.filtered["moe"][220] == 1


def test_run_pipeline_absent_probs_leaves_gmr_in_charge():
    model, dataset = toy_trained_model(seed=2)
    run = dataset.runs[0]
    result = run_pipeline(
        model,
        schedule_all_pre(),
        run,
        probs={},
        config=PipelineConfig(phase_config=PhaseConfig(tau=30.0, alpha_s=2.0)),
    )
    assert all(v.detail == {"absent": True} for v in result.vlm_verdicts)
    assert all(r["winner"] == "gmr" for r in result.records())
    assert result.raw["moe"] == result.raw["gmr"]


def test_run_pipeline_requires_some_phase_source():
    model, dataset = toy_trained_model(seed=3)
    run = dataset.runs[0]
    probs = {f.index: ClassDistribution(1.0, 0.0, 0.0) for f in run.frames}
    with pytest.raises(AlignmentError):
        run_pipeline(model, schedule_all_pre(), run, probs, PipelineConfig())


def test_run_pipeline_prefers_frame_phase_over_clock():
    model, dataset = toy_trained_model(seed=4)
    run = dataset.runs[0]
    late_sched = ExpectedStateSchedule(
        intervals=(
            ScheduleInterval(0.5, 1.0, frozenset({"pre"})),
            ScheduleInterval(0.0, 0.5, frozenset({"effect"})),
        )
    )
    # frames carry phase 0.9: "pre" expected even though the clock says late
    for f in run.frames:
        f.phase = 0.9
    probs = {f.index: ClassDistribution(1.0, 0.0, 0.0) for f in run.frames}
    config = PipelineConfig(phase_config=PhaseConfig(tau=0.01, alpha_s=5.0))
    result = run_pipeline(model, late_sched, run, probs, config)
    assert sum(result.raw["vlm"]) == 0


def test_fused_stream_roundtrip(tmp_path):
    model, dataset = toy_trained_model(seed=5)
    run = dataset.runs[0]
    probs = {f.index: ClassDistribution(1.0, 0.0, 0.0) for f in run.frames}
    config = PipelineConfig(window=8, phase_config=PhaseConfig(tau=30.0, alpha_s=2.0))
    result = run_pipeline(model, schedule_all_pre(), run, probs, config)
    path = tmp_path / "fused.jsonl"
    write_fused_stream(result, path, meta={"note": "test"})
    records = read_fused_stream(path)
    assert len(records) == len(run.frames)
    assert records[0]["index"] == run.frames[0].index
    for rec, want in zip(records, result.records()):
        assert rec == want
    # header line is skipped, not returned
    first = path.read_text().splitlines()[0]
    assert "fused-stream" in first