"""Canonical phase clock and the phase-to-allowed-labels schedule.

The phase variable follows the first-order canonical system
s(t) = exp(-alpha_s * t / tau), so a run starts at s = 1 and decays toward
0 without reaching it. A schedule partitions (0, 1] into half-open
intervals (s_low, s_high], each naming the classifier labels considered
normal there; s = 1 belongs to the first (latest-phase) interval.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from anomoe.data import CLASS_LABELS
from anomoe.errors import DataFormatError


@dataclass
class PhaseConfig:
    tau: float  # movement duration, seconds
    alpha_s: float  # canonical decay gain

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.alpha_s <= 0:
            raise ValueError(f"alpha_s must be > 0, got {self.alpha_s}")

    def to_json_dict(self) -> dict:
        return {"tau": self.tau, "alpha_s": self.alpha_s}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "PhaseConfig":
        return cls(tau=float(obj["tau"]), alpha_s=float(obj["alpha_s"]))


def canonical_phase(t: float, config: PhaseConfig) -> float:
    """Phase at time t seconds from run start."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return math.exp(-config.alpha_s * t / config.tau)


def phase_to_time(s: float, config: PhaseConfig) -> float:
    """Closed-form inverse of canonical_phase."""
    if not 0.0 < s <= 1.0:
        raise ValueError(f"s must lie in (0, 1], got {s}")
    return -config.tau * math.log(s) / config.alpha_s


@dataclass
class ScheduleInterval:
    s_low: float
    s_high: float
    allowed: frozenset[str]

    def __post_init__(self):
        self.allowed = frozenset(self.allowed)
        if not self.allowed:
            raise ValueError("interval allows no labels")
        unknown = self.allowed - set(CLASS_LABELS)
        if unknown:
            raise ValueError(f"unknown labels {sorted(unknown)}")
        if not self.s_low < self.s_high:
            raise ValueError(f"need s_low < s_high, got ({self.s_low}, {self.s_high}]")

    def contains(self, s: float) -> bool:
        return self.s_low < s <= self.s_high


@dataclass
class ExpectedStateSchedule:
    """Ordered intervals covering (0, 1], highest phase first."""

    intervals: list[ScheduleInterval]

    def __post_init__(self):
        self.intervals = sorted(self.intervals, key=lambda iv: -iv.s_high)


def expected_labels(schedule: ExpectedStateSchedule, s: float) -> frozenset[str]:
    """Allowed label set at phase s."""
    if not 0.0 < s <= 1.0:
        raise ValueError(f"phase {s} outside (0, 1]")
    for iv in schedule.intervals:
        if iv.contains(s):
            return iv.allowed
    raise ValueError(f"phase {s} not covered by the schedule")


def validate_schedule(schedule: ExpectedStateSchedule) -> list[str]:
    """Diagnostics for gaps and overlaps; empty iff (0, 1] is partitioned."""
    problems: list[str] = []
    ivs = schedule.intervals  # already sorted, highest first
    if not ivs:
        return ["schedule has no intervals"]
    if ivs[0].s_high != 1.0:
        problems.append(f"gap ({ivs[0].s_high}, 1] uncovered at the start")
    for a, b in zip(ivs, ivs[1:]):
        if b.s_high < a.s_low:
            problems.append(f"gap ({b.s_high}, {a.s_low}] uncovered")
        elif b.s_high > a.s_low:
            problems.append(
                f"overlap ({max(a.s_low, b.s_low)}, {b.s_high}] covered twice"
            )
    if ivs[-1].s_low != 0.0:
        problems.append(f"gap (0, {ivs[-1].s_low}] uncovered at the end")
    return problems


# -- JSON form -------------------------------------------------------------


def schedule_to_json_list(schedule: ExpectedStateSchedule) -> list[dict]:
    return [
        {"s_low": iv.s_low, "s_high": iv.s_high, "allowed": sorted(iv.allowed)}
        for iv in schedule.intervals
    ]


def schedule_from_json_list(items: list[dict]) -> ExpectedStateSchedule:
    try:
        return ExpectedStateSchedule(
            [
                ScheduleInterval(
                    s_low=float(it["s_low"]),
                    s_high=float(it["s_high"]),
                    allowed=frozenset(it["allowed"]),
                )
                for it in items
            ]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed schedule: {exc}") from exc


def save_schedule(schedule: ExpectedStateSchedule, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schedule_to_json_list(schedule), fh, indent=1)
        fh.write("\n")


def load_schedule(path) -> ExpectedStateSchedule:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            items = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(items, list):
        raise DataFormatError(f"{path}: expected a JSON list of intervals")
    return schedule_from_json_list(items)
