import math

import pytest

from anomoe.errors import DataFormatError
from anomoe.phase import (
    ExpectedStateSchedule,
    PhaseConfig,
    ScheduleInterval,
    canonical_phase,
    expected_labels,
    load_schedule,
    phase_to_time,
    save_schedule,
    schedule_from_json_list,
    schedule_to_json_list,
    validate_schedule,
)


def demo_schedule():
    return ExpectedStateSchedule(
        intervals=(
            ScheduleInterval(0.55, 1.0, frozenset({"pre"})),
            ScheduleInterval(0.35, 0.55, frozenset({"pre", "effect"})),
            ScheduleInterval(0.0, 0.35, frozenset({"effect"})),
        )
    )


def test_phase_starts_at_one():
    cfg = PhaseConfig(tau=3.0, alpha_s=2.0)
    assert canonical_phase(0.0, cfg) == 1.0


def test_phase_known_value():
    cfg = PhaseConfig(tau=2.0, alpha_s=1.0)
    assert math.isclose(canonical_phase(2.0, cfg), math.exp(-1.0), rel_tol=1e-12)


def test_phase_strictly_decreasing():
    cfg = PhaseConfig(tau=5.0, alpha_s=2.5)
    values = [canonical_phase(0.3 * i, cfg) for i in range(40)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert all(0.0 < v <= 1.0 for v in values)


def test_phase_time_roundtrip():
    cfg = PhaseConfig(tau=4.0, alpha_s=3.0)
    for t in [0.0, 0.01, 1.0, 3.7, 12.0]:
        s = canonical_phase(t, cfg)
        assert math.isclose(phase_to_time(s, cfg), t, abs_tol=1e-9)


def test_phase_rejects_bad_arguments():
    cfg = PhaseConfig(tau=1.0, alpha_s=1.0)
    with pytest.raises(ValueError):
        canonical_phase(-0.1, cfg)
    with pytest.raises(ValueError):
        phase_to_time(0.0, cfg)
    with pytest.raises(ValueError):
        phase_to_time(1.1, cfg)
    with pytest.raises(ValueError):
        PhaseConfig(tau=0.0, alpha_s=1.0)
    with pytest.raises(ValueError):
        PhaseConfig(tau=1.0, alpha_s=-2.0)


def test_interval_half_open_bounds():
    iv = ScheduleInterval(0.35, 0.55, frozenset({"pre"}))
    assert not iv.contains(0.35)
    assert iv.contains(0.55)
    assert iv.contains(0.4)
    assert not iv.contains(0.6)


def test_interval_rejects_bad_labels():
    with pytest.raises(ValueError):
        ScheduleInterval(0.0, 1.0, frozenset())
    with pytest.raises(ValueError):
        ScheduleInterval(0.0, 1.0, frozenset({"post"}))
    with pytest.raises(ValueError):
        ScheduleInterval(0.5, 0.5, frozenset({"pre"}))


def test_expected_labels_lookup():
    sched = demo_schedule()
    assert expected_labels(sched, 1.0) == frozenset({"pre"})
    assert expected_labels(sched, 0.7) == frozenset({"pre"})
    assert expected_labels(sched, 0.55) == frozenset({"pre", "effect"})
    assert expected_labels(sched, 0.54) == frozenset({"pre", "effect"})
    assert expected_labels(sched, 0.35) == frozenset({"effect"})
    assert expected_labels(sched, 0.01) == frozenset({"effect"})


def test_expected_labels_rejects_out_of_range():
    sched = demo_schedule()
    with pytest.raises(ValueError):
        expected_labels(sched, 0.0)
    with pytest.raises(ValueError):
        expected_labels(sched, 1.2)


def test_expected_labels_reports_gap():
    sched = ExpectedStateSchedule(
        intervals=(
            ScheduleInterval(0.6, 1.0, frozenset({"pre"})),
            ScheduleInterval(0.0, 0.4, frozenset({"effect"})),
        )
    )
    with pytest.raises(ValueError, match="not covered"):
        expected_labels(sched, 0.5)


def test_validate_schedule_clean():
    assert validate_schedule(demo_schedule()) == []


def test_validate_schedule_finds_gap_and_overlap():
    gap = ExpectedStateSchedule(
        intervals=(
            ScheduleInterval(0.6, 1.0, frozenset({"pre"})),
            ScheduleInterval(0.0, 0.4, frozenset({"effect"})),
        )
    )
    problems = validate_schedule(gap)
    assert any("gap" in p for p in problems)

    overlap = ExpectedStateSchedule(
        intervals=(
            ScheduleInterval(0.5, 1.0, frozenset({"pre"})),
            ScheduleInterval(0.0, 0.6, frozenset({"effect"})),
        )
    )
    problems = validate_schedule(overlap)
    assert any("overlap" in p for p in problems)


def test_validate_schedule_flags_uncovered_ends():
    missing_top = ExpectedStateSchedule(
        intervals=(ScheduleInterval(0.0, 0.9, frozenset({"pre"})),)
    )
    assert any("1" in p for p in validate_schedule(missing_top))
    missing_bottom = ExpectedStateSchedule(
        intervals=(ScheduleInterval(0.1, 1.0, frozenset({"pre"})),)
    )
    assert any("0" in p for p in validate_schedule(missing_bottom))


def test_schedule_sorts_intervals():
    shuffled = ExpectedStateSchedule(
        intervals=(
            ScheduleInterval(0.0, 0.35, frozenset({"effect"})),
            ScheduleInterval(0.55, 1.0, frozenset({"pre"})),
            ScheduleInterval(0.35, 0.55, frozenset({"pre", "effect"})),
        )
    )
    assert shuffled.intervals[0].s_high == 1.0
    assert validate_schedule(shuffled) == []


def test_schedule_json_roundtrip(tmp_path):
    sched = demo_schedule()
    items = schedule_to_json_list(sched)
    back = schedule_from_json_list(items)
    assert back.intervals == sched.intervals
    path = tmp_path / "sched.json"
    save_schedule(sched, path)
    assert load_schedule(path).intervals == sched.intervals


def test_schedule_json_rejects_malformed(tmp_path):
    with pytest.raises(DataFormatError):
        schedule_from_json_list([{"s_low": 0.0}])
    path = tmp_path / "bad.json"
    path.write_text('{"not": "a list"}')
    with pytest.raises(DataFormatError):
        load_schedule(path)


def test_phase_config_json_roundtrip():
    cfg = PhaseConfig(tau=7.5, alpha_s=1.25)
    assert PhaseConfig.from_json_dict(cfg.to_json_dict()) == cfg
