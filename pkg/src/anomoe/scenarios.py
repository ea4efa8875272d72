"""Synthetic multimodal runs with scripted anomalies.

Two skill families are modeled at desk scale: a pouring motion and a
box-grasping motion. Nominal runs follow a minimum-jerk pose profile plus
a scripted contact-force profile; each anomaly archetype perturbs the
signals, the ground-truth labels, and the simulated classifier stream in
its own way:

* ``overshoot``        pose drifts past the target, force stays nominal
* ``dripping``         all low-level signals nominal, only the classifier
                       stream reports the unsatisfied effect
* ``perturbation``     transient external force spike; the classifier
                       reacts only after a visual lag
* ``empty_container``  the pour's force ramp never materializes
* ``missed_contact``   the grasp's contact force never appears and the
                       classifier flags early
* ``locked_mechanism`` extra resistance force from engagement onward,
                       visually confirmed only near the end
* ``pull_away``        sustained lateral pose deviation mid-task

Every magnitude, onset, and lag here is a tunable convention of this
generator, not a measured quantity. All randomness flows from one seeded
generator per run, so identical specs produce identical bytes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Any

import numpy as np

from anomoe.data import (
    CLASS_LABELS,
    FeatureSchema,
    Frame,
    Run,
    SkillDataset,
)
from anomoe.classifier import ClassDistribution
from anomoe.errors import DataFormatError
from anomoe.phase import (
    ExpectedStateSchedule,
    PhaseConfig,
    ScheduleInterval,
    canonical_phase,
    phase_to_time,
)

ARCHETYPES = (
    "nominal",
    "overshoot",
    "dripping",
    "perturbation",
    "empty_container",
    "missed_contact",
    "locked_mechanism",
    "pull_away",
)

ROLES = ("train", "test")

MANIFEST_FORMAT = "scenario-bundle"
MANIFEST_VERSION = 1


def make_schema() -> FeatureSchema:
    """Schema shared by all synthetic runs: time in, pose and force out."""
    return FeatureSchema(
        input_names=("t",),
        output_groups={"pose": ("px", "py", "pz"), "force": ("fx", "fy", "fz")},
        units={
            "t": "s",
            "px": "m",
            "py": "m",
            "pz": "m",
            "fx": "N",
            "fy": "N",
            "fz": "N",
        },
    )


@dataclass
class _SkillProfile:
    name: str
    p_start: np.ndarray
    p_end: np.ndarray
    force_base: np.ndarray
    # scripted fz events: (ramp start as duration fraction, rise width s, delta N)
    force_events: tuple[tuple[float, float, float], ...]
    s_switch: float  # phase where the true state flips pre -> effect
    alpha_s: float
    schedule_rows: tuple[tuple[float, float, tuple[str, ...]], ...]


_PROFILES: dict[str, _SkillProfile] = {
    "pouring": _SkillProfile(
        name="pouring",
        p_start=np.array([0.0, 0.0, 0.30]),
        p_end=np.array([0.40, 0.20, 0.10]),
        force_base=np.array([0.30, 0.20, 1.50]),
        force_events=((0.5, 0.4, 1.5), (0.875, 0.4, -1.5)),
        s_switch=0.45,
        alpha_s=2.0,
        schedule_rows=(
            (0.55, 1.0, ("pre",)),
            (0.35, 0.55, ("pre", "effect")),
            (0.0, 0.35, ("effect",)),
        ),
    ),
    "grasping": _SkillProfile(
        name="grasping",
        p_start=np.array([0.0, 0.0, 0.25]),
        p_end=np.array([0.35, 0.0, 0.05]),
        force_base=np.array([0.25, 0.15, 0.0]),
        force_events=((0.5, 0.3, 4.0),),
        s_switch=0.40,
        alpha_s=2.0,
        schedule_rows=(
            (0.50, 1.0, ("pre",)),
            (0.30, 0.50, ("pre", "effect")),
            (0.0, 0.30, ("effect",)),
        ),
    ),
}


def skill_phase_config(skill: str, duration_s: float) -> PhaseConfig:
    return PhaseConfig(tau=duration_s, alpha_s=_profile(skill).alpha_s)


def skill_schedule(skill: str) -> ExpectedStateSchedule:
    return ExpectedStateSchedule(
        [
            ScheduleInterval(s_low=lo, s_high=hi, allowed=frozenset(allowed))
            for lo, hi, allowed in _profile(skill).schedule_rows
        ]
    )


def _profile(skill: str) -> _SkillProfile:
    try:
        return _PROFILES[skill]
    except KeyError:
        raise ValueError(f"unknown skill {skill!r}; expected one of {sorted(_PROFILES)}")


@dataclass
class ScenarioSpec:
    """Everything needed to synthesize one run deterministically."""

    archetype: str
    skill: str = "pouring"
    duration_s: float = 10.0
    dt_s: float = 0.05
    noise_pose: float = 0.004  # m
    noise_force: float = 0.08  # N
    onset_s: float | None = None  # archetype default when None
    offset_s: float | None = None
    magnitude: float | None = None  # N or m depending on archetype
    visual_lag_s: float = 1.0
    classifier_softness: float = 0.15
    confusion: dict[str, float] = field(
        default_factory=lambda: {lbl: 0.05 for lbl in CLASS_LABELS}
    )
    seed: int = 0
    skill_id: str = ""

    def __post_init__(self):
        if self.archetype not in ARCHETYPES:
            raise ValueError(
                f"unknown archetype {self.archetype!r}; expected one of {ARCHETYPES}"
            )
        _profile(self.skill)
        if self.duration_s <= 0 or self.dt_s <= 0:
            raise ValueError("duration_s and dt_s must be positive")
        if not 0.0 <= self.classifier_softness <= 1.0:
            raise ValueError("classifier_softness must lie in [0, 1]")
        for lbl, rate in self.confusion.items():
            if lbl not in CLASS_LABELS:
                raise ValueError(f"confusion rate for unknown label {lbl!r}")
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"confusion rate {rate} outside [0, 1]")
        if not self.skill_id:
            self.skill_id = f"{self.skill}-{self.archetype}-s{self.seed}"

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "archetype": self.archetype,
            "skill": self.skill,
            "duration_s": self.duration_s,
            "dt_s": self.dt_s,
            "noise_pose": self.noise_pose,
            "noise_force": self.noise_force,
            "onset_s": self.onset_s,
            "offset_s": self.offset_s,
            "magnitude": self.magnitude,
            "visual_lag_s": self.visual_lag_s,
            "classifier_softness": self.classifier_softness,
            "confusion": dict(self.confusion),
            "seed": self.seed,
            "skill_id": self.skill_id,
        }

    @classmethod
    def from_json_dict(cls, obj: dict[str, Any]) -> "ScenarioSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise DataFormatError(f"unknown scenario fields {sorted(unknown)}")
        return cls(**obj)


@dataclass
class _Timing:
    """Concrete event times after archetype defaults are resolved."""

    onset: float | None
    offset: float | None
    magnitude: float
    cls_onset: float | None  # start of the classifier's unsatisfied window
    cls_offset: float | None
    suppress_events: bool  # expected force profile never happens
    pose_dir: np.ndarray | None  # unit direction of pose deviation
    pose_ramp: float  # seconds to full pose deviation
    force_event: tuple[float, float, float] | None  # (t0, rise, delta fz)
    pulse: tuple[float, float, float] | None  # (t_on, t_off, rise) for fz spike


def _resolve(spec: ScenarioSpec) -> _Timing:
    T = spec.duration_s
    lag = spec.visual_lag_s
    a = spec.archetype
    prof = _profile(spec.skill)

    def pick(value, default):
        return default if value is None else value

    if a == "nominal":
        if spec.onset_s is not None or spec.offset_s is not None:
            raise ValueError("nominal runs take no onset/offset")
        return _Timing(None, None, 0.0, None, None, False, None, 0.0, None, None)

    if a == "overshoot":
        onset = pick(spec.onset_s, 0.6 * T)
        offset = pick(spec.offset_s, T)
        mag = pick(spec.magnitude, 0.15)
        motion = prof.p_end - prof.p_start
        return _Timing(
            onset, offset, mag,
            min(onset + lag, offset), offset,
            False, motion / np.linalg.norm(motion), 0.5, None, None,
        )
    if a == "dripping":
        onset = pick(spec.onset_s, 0.55 * T)
        offset = pick(spec.offset_s, 0.95 * T)
        return _Timing(onset, offset, 0.0, onset, offset, False, None, 0.0, None, None)
    if a == "perturbation":
        onset = pick(spec.onset_s, 0.3 * T)
        offset = pick(spec.offset_s, onset + 2.0)
        mag = pick(spec.magnitude, 20.0)
        return _Timing(
            onset, offset, mag,
            min(onset + lag, offset), offset,
            False, None, 0.0, None, (onset, offset, 0.1),
        )
    if a == "empty_container":
        # the pour never happens; deviation spans the scripted ramps
        first = min(e[0] for e in prof.force_events) * T
        last = max(e[0] * T + e[1] for e in prof.force_events)
        onset = pick(spec.onset_s, first)
        offset = pick(spec.offset_s, last)
        return _Timing(
            onset, offset, 0.0,
            min(onset + lag, offset), offset,
            True, None, 0.0, None, None,
        )
    if a == "missed_contact":
        first = min(e[0] for e in prof.force_events) * T
        onset = pick(spec.onset_s, first)
        offset = pick(spec.offset_s, T)
        return _Timing(
            onset, offset, 0.0,
            max(0.0, onset - 0.25), offset,
            True, None, 0.0, None, None,
        )
    if a == "locked_mechanism":
        onset = pick(spec.onset_s, 0.55 * T)
        offset = pick(spec.offset_s, T)
        mag = pick(spec.magnitude, 4.0)
        return _Timing(
            onset, offset, mag,
            min(0.75 * T, offset), offset,
            False, None, 0.0, (onset, 0.2, mag), None,
        )
    if a == "pull_away":
        onset = pick(spec.onset_s, 0.6 * T)
        offset = pick(spec.offset_s, T)
        mag = pick(spec.magnitude, 0.12)
        return _Timing(
            onset, offset, mag,
            min(onset + lag, offset), offset,
            False, np.array([0.0, 1.0, 0.0]), 0.6, None, None,
        )
    raise AssertionError(a)


def _check_window(timing: _Timing, spec: ScenarioSpec) -> None:
    if timing.onset is None:
        return
    if not 0.0 <= timing.onset < timing.offset <= spec.duration_s:
        raise ValueError(
            f"anomaly window [{timing.onset}, {timing.offset}) does not fit in "
            f"[0, {spec.duration_s}]"
        )


def _smoothstep(t: np.ndarray, t0: float, width: float) -> np.ndarray:
    x = np.clip((t - t0) / width, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _minimum_jerk(frac: np.ndarray) -> np.ndarray:
    return frac**3 * (10.0 - 15.0 * frac + 6.0 * frac**2)


def _nominal_signals(
    t: np.ndarray, spec: ScenarioSpec, suppress_events: bool
) -> tuple[np.ndarray, np.ndarray]:
    prof = _profile(spec.skill)
    shape = _minimum_jerk(t / spec.duration_s)
    pose = prof.p_start[None, :] + shape[:, None] * (prof.p_end - prof.p_start)[None, :]
    force = np.tile(prof.force_base, (len(t), 1))
    if not suppress_events:
        for frac, width, delta in prof.force_events:
            force[:, 2] += delta * _smoothstep(t, frac * spec.duration_s, width)
    return pose, force


def _true_labels(t: np.ndarray, spec: ScenarioSpec, timing: _Timing) -> list[str]:
    prof = _profile(spec.skill)
    phase_cfg = skill_phase_config(spec.skill, spec.duration_s)
    t_switch = phase_to_time(prof.s_switch, phase_cfg)
    labels = ["pre" if ti < t_switch else "effect" for ti in t]
    if timing.cls_onset is not None:
        for i, ti in enumerate(t):
            if timing.cls_onset <= ti < timing.cls_offset:
                labels[i] = "unsatisfied"
    return labels


def generate_run(spec: ScenarioSpec) -> tuple[Run, dict[int, ClassDistribution]]:
    """Synthesize one run and its classifier probability stream."""
    timing = _resolve(spec)
    _check_window(timing, spec)
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration_s / spec.dt_s))
    t = np.arange(n) * spec.dt_s

    pose, force = _nominal_signals(t, spec, timing.suppress_events)
    if timing.pose_dir is not None:
        drift = timing.magnitude * _smoothstep(t, timing.onset, timing.pose_ramp)
        drift = drift * (t < timing.offset)
        pose = pose + drift[:, None] * timing.pose_dir[None, :]
    if timing.force_event is not None:
        t0, rise, delta = timing.force_event
        force[:, 2] += delta * _smoothstep(t, t0, rise) * (t < timing.offset)
    if timing.pulse is not None:
        t_on, t_off, rise = timing.pulse
        envelope = _smoothstep(t, t_on, rise) - _smoothstep(t, t_off - rise, rise)
        force[:, 2] += timing.magnitude * envelope

    pose = pose + rng.normal(0.0, spec.noise_pose, size=pose.shape)
    force = force + rng.normal(0.0, spec.noise_force, size=force.shape)

    labels = _true_labels(t, spec, timing)
    confuse_draw = rng.random(n)
    emitted = []
    for i, lbl in enumerate(labels):
        if confuse_draw[i] < spec.confusion.get(lbl, 0.0):
            others = [x for x in CLASS_LABELS if x != lbl]
            lbl = others[int(rng.integers(len(others)))]
        emitted.append(lbl)

    soft = spec.classifier_softness
    probs: dict[int, ClassDistribution] = {}
    for i, lbl in enumerate(emitted):
        vec = [soft / 3.0] * 3
        vec[CLASS_LABELS.index(lbl)] += 1.0 - soft
        probs[i] = ClassDistribution(*vec)

    phase_cfg = skill_phase_config(spec.skill, spec.duration_s)
    frames = []
    for i in range(n):
        ti = float(t[i])
        gt = timing.onset is not None and timing.onset <= ti < timing.offset
        frames.append(
            Frame(
                index=i,
                time_s=ti,
                xi_input=np.array([ti]),
                xi_output={"pose": pose[i], "force": force[i]},
                phase=canonical_phase(ti, phase_cfg),
                gt_anomaly=gt,
            )
        )
    run = Run(
        frames=frames,
        dt_s=spec.dt_s,
        skill_id=spec.skill_id,
        success=spec.archetype == "nominal",
    )
    return run, probs


# -- suites ----------------------------------------------------------------


@dataclass
class SuiteConfig:
    """A named batch of scenario specs plus the skill's detection setup."""

    name: str
    skill: str
    k: int  # recommended mixture size
    alpha: float  # recommended confidence gain
    entries: list[tuple[ScenarioSpec, str]]  # (spec, role)
    window: int = 8
    train_seed: int = 0  # reference seed for reproducible model fits

    def phase_config(self, duration_s: float) -> PhaseConfig:
        return skill_phase_config(self.skill, duration_s)

    def schedule(self) -> ExpectedStateSchedule:
        return skill_schedule(self.skill)


@dataclass
class SuiteBundle:
    """All artifacts of one generated suite."""

    dataset: SkillDataset
    probs: dict[str, dict[int, ClassDistribution]]  # skill_id -> stream
    manifest: dict[str, Any]
    suite: SuiteConfig

    def train_dataset(self) -> SkillDataset:
        train_ids = {
            r["skill_id"] for r in self.manifest["runs"] if r["role"] == "train"
        }
        return SkillDataset(
            schema=self.dataset.schema,
            runs=[r for r in self.dataset.runs if r.skill_id in train_ids],
            provenance="synthetic",
        )

    def test_runs(self) -> list[Run]:
        test_ids = {r["skill_id"] for r in self.manifest["runs"] if r["role"] == "test"}
        return [r for r in self.dataset.runs if r.skill_id in test_ids]

    def test_dataset(self) -> SkillDataset:
        return SkillDataset(
            schema=self.dataset.schema,
            runs=self.test_runs(),
            provenance="synthetic",
        )


def generate_suite(suite: SuiteConfig) -> SuiteBundle:
    """Generate every run of a suite with a manifest for exact replay."""
    runs: list[Run] = []
    probs: dict[str, dict[int, ClassDistribution]] = {}
    entries_meta: list[dict[str, Any]] = []
    for spec, role in suite.entries:
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}; expected one of {ROLES}")
        run, stream = generate_run(spec)
        if run.skill_id in probs:
            raise ValueError(f"duplicate skill_id {run.skill_id!r} in suite")
        runs.append(run)
        probs[run.skill_id] = stream
        timing = _resolve(spec)
        entries_meta.append(
            {
                "skill_id": run.skill_id,
                "archetype": spec.archetype,
                "role": role,
                "seed": spec.seed,
                "onset_s": timing.onset,
                "offset_s": timing.offset,
                "n_frames": len(run.frames),
                "spec": spec.to_json_dict(),
            }
        )
    dataset = SkillDataset(schema=make_schema(), runs=runs, provenance="synthetic")
    dataset.validate()
    durations = {spec.duration_s for spec, _ in suite.entries}
    manifest: dict[str, Any] = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "name": suite.name,
        "skill": suite.skill,
        "k": suite.k,
        "alpha": suite.alpha,
        "window": suite.window,
        "train_seed": suite.train_seed,
        "phase": {
            "alpha_s": _profile(suite.skill).alpha_s,
            "tau": max(durations),
        },
        "runs": entries_meta,
    }
    return SuiteBundle(dataset=dataset, probs=probs, manifest=manifest, suite=suite)


def load_suite(path) -> SuiteConfig:
    """Read a suite description into a SuiteConfig.

    Accepts a JSON file path or the bare name of a bundled suite
    ("pouring", "grasping").
    """
    name = str(path)
    if not os.path.exists(name):
        if "/" not in name and not name.endswith(".json"):
            bundled = resources.files("anomoe") / "suites" / f"{name}_suite.json"
            if bundled.is_file():
                try:
                    obj = json.loads(bundled.read_text(encoding="utf-8"))
                except json.JSONDecodeError as exc:
                    raise DataFormatError(f"{name}: invalid JSON: {exc}") from exc
                return suite_from_json_dict(obj, where=name)
        raise DataFormatError(f"suite {name!r} not found (no such file or bundled suite)")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    return suite_from_json_dict(obj, where=str(path))


def suite_from_json_dict(obj: dict[str, Any], where: str = "suite") -> SuiteConfig:
    try:
        skill = obj["skill"]
        defaults = obj.get("defaults", {})
        entries: list[tuple[ScenarioSpec, str]] = []
        for i, row in enumerate(obj["runs"]):
            row = dict(row)
            role = row.pop("role", "test")
            merged = {**defaults, **row, "skill": skill}
            merged.setdefault("skill_id", f"{skill}-{merged['archetype']}-{i:03d}")
            entries.append((ScenarioSpec.from_json_dict(merged), role))
        return SuiteConfig(
            name=obj["name"],
            skill=skill,
            k=int(obj["k"]),
            alpha=float(obj["alpha"]),
            window=int(obj.get("window", 8)),
            train_seed=int(obj.get("train_seed", 0)),
            entries=entries,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{where}: malformed suite: {exc}") from exc
