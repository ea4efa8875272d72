import math

import numpy as np
import pytest

from anomoe.data import Frame
from anomoe.errors import NotCalibratedError
from anomoe.gmm import EmConfig, fit_em, modality_deviations
from anomoe.gmr import (
    ANOMALY,
    NO_ANOMALY,
    ExpertVerdict,
    epsilon_ratio,
    gmr_confidence,
    gmr_verdict,
    gmr_verdicts,
    mahalanobis,
    replay_is_clean,
    verdict_from_json_dict,
    verdict_to_json_dict,
)

from _helpers import dataset_from_matrix, random_spd, toy_trained_model


def test_mahalanobis_identity_cov_is_euclidean():
    x = np.array([3.0, 4.0])
    assert math.isclose(mahalanobis(x, np.zeros(2), np.eye(2)), 5.0, abs_tol=1e-12)


def test_mahalanobis_matches_inverse_formula():
    rng = np.random.default_rng(0)
    for _ in range(10):
        d = 5
        cov = random_spd(rng, d)
        x, mean = rng.normal(size=d), rng.normal(size=d)
        ref = math.sqrt((x - mean) @ np.linalg.inv(cov) @ (x - mean))
        assert math.isclose(mahalanobis(x, mean, cov), ref, rel_tol=1e-9)


def test_mahalanobis_scales_with_variance():
    # doubling the std halves the distance
    a = mahalanobis(np.array([2.0]), np.array([0.0]), np.array([[1.0]]))
    b = mahalanobis(np.array([2.0]), np.array([0.0]), np.array([[4.0]]))
    assert math.isclose(a, 2.0, abs_tol=1e-12)
    assert math.isclose(b, 1.0, abs_tol=1e-12)


def test_epsilon_ratio_basics():
    assert epsilon_ratio(2.0, 4.0) == 0.5
    assert epsilon_ratio(0.0, 3.0) == 0.0
    assert epsilon_ratio(5.0, math.inf) == 0.0
    with pytest.raises(ValueError):
        epsilon_ratio(-0.1, 1.0)
    with pytest.raises(ValueError):
        epsilon_ratio(1.0, 0.0)
    with pytest.raises(ValueError):
        epsilon_ratio(1.0, -2.0)


def test_confidence_half_at_boundary_and_zero_sharpness():
    for alpha in [0.0, 0.5, 5.0, 100.0]:
        pred, conf = gmr_confidence(1.0, alpha)
        assert pred == NO_ANOMALY
        assert abs(conf - 0.5) <= 1e-12
    for eps in [0.0, 0.3, 1.0, 2.5]:
        _, conf = gmr_confidence(eps, 0.0)
        assert abs(conf - 0.5) <= 1e-12


def test_confidence_known_values():
    # eps=1.4, alpha=5: logistic of 2
    pred, conf = gmr_confidence(1.4, 5.0)
    assert pred == ANOMALY
    assert math.isclose(conf, 1.0 / (1.0 + math.exp(-2.0)), abs_tol=1e-12)
    pred, conf = gmr_confidence(0.6, 5.0)
    assert pred == NO_ANOMALY
    assert math.isclose(conf, 1.0 / (1.0 + math.exp(-2.0)), abs_tol=1e-12)


def test_confidence_stays_inside_open_interval():
    for eps, alpha in [(1000.0, 100.0), (0.0, 1000.0), (1e6, 5.0), (1.0 + 1e-15, 1e9)]:
        _, conf = gmr_confidence(eps, alpha)
        assert 0.0 < conf < 1.0


def test_confidence_monotone_in_eps_past_boundary():
    alpha = 3.0
    grid = 1.0 + np.linspace(1e-3, 4.0, 200)
    confs = [gmr_confidence(float(e), alpha)[1] for e in grid]
    assert all(a < b for a, b in zip(confs, confs[1:]))


def test_confidence_rejects_bad_arguments():
    with pytest.raises(ValueError):
        gmr_confidence(-0.1, 1.0)
    with pytest.raises(ValueError):
        gmr_confidence(0.5, -1.0)


def test_verdict_validates_fields():
    with pytest.raises(ValueError):
        ExpertVerdict(prediction="maybe", confidence=0.5, expert="gmr")
    with pytest.raises(ValueError):
        ExpertVerdict(prediction=ANOMALY, confidence=1.5, expert="gmr")
    v = ExpertVerdict(prediction=ANOMALY, confidence=0.9, expert="gmr")
    assert v.is_anomaly


def test_gmr_verdict_on_training_data_is_normal():
    model, dataset = toy_trained_model(seed=0)
    frames = list(dataset.iter_frames())
    verdicts = gmr_verdicts(model, frames)
    assert len(verdicts) == len(frames)
    assert all(v.prediction == NO_ANOMALY for v in verdicts)
    assert replay_is_clean(model, frames)


def test_gmr_verdict_flags_large_force_deviation():
    model, dataset = toy_trained_model(seed=1)
    frame = dataset.runs[0].frames[150]
    bumped = Frame(
        index=frame.index,
        time_s=frame.time_s,
        xi_input=frame.xi_input,
        xi_output={
            "pose": frame.xi_output["pose"],
            "force": frame.xi_output["force"] + 5.0,
        },
    )
    v = gmr_verdict(model, bumped)
    assert v.prediction == ANOMALY
    mods = v.detail["modalities"]
    assert mods["force"]["prediction"] == ANOMALY
    assert mods["force"]["epsilon"] > 1.0
    assert mods["pose"]["prediction"] == NO_ANOMALY
    # anomalous branch takes its confidence from the anomalous modality
    assert v.confidence == mods["force"]["confidence"]


def test_aggregation_takes_max_over_anomalous_modalities():
    model, dataset = toy_trained_model(seed=2)
    frame = dataset.runs[0].frames[100]
    bumped = Frame(
        index=frame.index,
        time_s=frame.time_s,
        xi_input=frame.xi_input,
        xi_output={
            "pose": frame.xi_output["pose"] + 2.0,
            "force": frame.xi_output["force"] + 8.0,
        },
    )
    v = gmr_verdict(model, bumped)
    mods = v.detail["modalities"]
    anomalous = [m for m in mods if mods[m]["prediction"] == ANOMALY]
    assert len(anomalous) == 2
    assert v.confidence == max(mods[m]["confidence"] for m in anomalous)


def test_normal_aggregation_takes_max_confidence():
    model, dataset = toy_trained_model(seed=3)
    v = gmr_verdict(model, dataset.runs[0].frames[42])
    mods = v.detail["modalities"]
    assert v.prediction == NO_ANOMALY
    assert v.confidence == max(mods[m]["confidence"] for m in mods)


def test_epsilon_is_unit_equivariant():
    """Expressing all features in different units leaves ratios unchanged."""
    rng = np.random.default_rng(4)
    n = 250
    t = np.linspace(0.0, 1.0, n)
    pose = np.stack([np.sin(2 * t), 0.5 * t], axis=1) + rng.normal(0, 0.01, (n, 2))
    force = (1.0 + t**2)[:, None] + rng.normal(0, 0.02, (n, 1))
    X = np.concatenate([t[:, None], pose, force], axis=1)

    from _helpers import small_schema
    from anomoe.gmm import calibrate_thresholds

    def ratios(X, probe):
        schema = small_schema()
        data = dataset_from_matrix(X, schema)
        model = fit_em(data, 1, EmConfig(seed=5))
        model = calibrate_thresholds(model, data)
        _, devs = modality_deviations(model, probe[None, :])
        return {
            m: devs[m][0] / model.thresholds[m][0] for m in schema.modalities
        }

    probe = X[n // 2].copy()
    probe[3] += 0.5
    r1 = ratios(X, probe)
    r2 = ratios(1000.0 * X, 1000.0 * probe)
    assert math.isclose(r1["force"], r2["force"], rel_tol=1e-9)
    assert math.isclose(r1["pose"], r2["pose"], rel_tol=1e-9)


def test_gmr_requires_calibration():
    model, dataset = toy_trained_model(seed=6)
    fresh = fit_em(dataset, 2, EmConfig(seed=6))
    with pytest.raises(NotCalibratedError):
        gmr_verdicts(fresh, [dataset.runs[0].frames[0]])


def test_verdict_json_roundtrip():
    model, dataset = toy_trained_model(seed=7)
    v = gmr_verdict(model, dataset.runs[0].frames[10])
    obj = verdict_to_json_dict(10, v)
    idx, back = verdict_from_json_dict(obj)
    assert idx == 10
    assert back.prediction == v.prediction
    assert back.confidence == v.confidence
    assert back.expert == v.expert
    assert back.detail == v.detail


def test_verdict_json_encodes_infinite_ceiling_as_null():
    import json

    v = ExpertVerdict(
        prediction=NO_ANOMALY,
        confidence=0.5,
        expert="gmr",
        detail={
            "component": 1,
            "modalities": {
                "y": {
                    "d": 2.0,
                    "d_max": math.inf,
                    "epsilon": 0.0,
                    "prediction": NO_ANOMALY,
                    "confidence": 0.5,
                }
            },
        },
    )
    obj = verdict_to_json_dict(0, v)
    text = json.dumps(obj)
    assert "Infinity" not in text
    _, back = verdict_from_json_dict(json.loads(text))
    assert math.isinf(back.detail["modalities"]["y"]["d_max"])


def test_unvisited_component_frames_come_back_normal():
    """An infinite ceiling turns any deviation into eps 0."""
    _, conf = gmr_confidence(epsilon_ratio(123.0, math.inf), 5.0)
    assert conf > 0.99
