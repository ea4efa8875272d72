"""Core record types, feature schema, and JSONL dataset serialization.

A dataset file is JSON Lines:

* optional dataset header
  ``{"format": "skill-dataset", "version": 1, "provenance": ..., "schema": {...}}``
* per run, one header line ``{"skill_id": ..., "dt_s": ..., "schema": {...}}``
  followed by one line per frame
  ``{"index": n, "time_s": t, "xi_input": [...], "xi_output": {"force": [...]},
  "phase": s, "class_probs": [p, p, p], "gt_anomaly": b}``.

Optional frame fields (``phase``, ``class_probs``, ``gt_anomaly``) are encoded
by absence, never by sentinel values. Floats survive a save/load round trip
exactly (Python's JSON encoder emits shortest round-trip representations).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

from anomoe.errors import DataFormatError, SchemaMismatchError

CLASS_LABELS = ("pre", "effect", "unsatisfied")
PROVENANCES = ("kinesthetic", "teleop", "autonomous", "synthetic")

DATASET_FORMAT = "skill-dataset"
DATASET_VERSION = 1

_CLASS_PROB_TOL = 1e-6


@dataclass
class FeatureSchema:
    """Names and grouping of the low-level features.

    ``input_names`` are the conditioning features; ``output_groups`` maps each
    sensor modality to its (ordered) output feature names. The two sets are
    disjoint and together define the full feature vector
    ``[inputs..., group0..., group1..., ...]`` in declaration order.
    """

    input_names: tuple[str, ...]
    output_groups: dict[str, tuple[str, ...]]
    units: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.input_names = tuple(self.input_names)
        self.output_groups = {m: tuple(names) for m, names in self.output_groups.items()}
        self.units = dict(self.units)
        self.validate()

    def validate(self) -> None:
        if not self.input_names:
            raise SchemaMismatchError("schema has no input features")
        if not self.output_groups:
            raise SchemaMismatchError("schema has no output groups")
        seen = set(self.input_names)
        if len(seen) != len(self.input_names):
            raise SchemaMismatchError("duplicate input feature names")
        for modality, names in self.output_groups.items():
            if not names:
                raise SchemaMismatchError(f"output group {modality!r} is empty")
            for name in names:
                if name in seen:
                    raise SchemaMismatchError(
                        f"feature {name!r} appears in more than one place in the schema"
                    )
                seen.add(name)

    @property
    def modalities(self) -> tuple[str, ...]:
        return tuple(self.output_groups)

    @property
    def input_dim(self) -> int:
        return len(self.input_names)

    @property
    def output_dim(self) -> int:
        return sum(len(v) for v in self.output_groups.values())

    @property
    def total_dim(self) -> int:
        return self.input_dim + self.output_dim

    def output_names(self) -> tuple[str, ...]:
        return tuple(n for names in self.output_groups.values() for n in names)

    def modality_slices(self) -> dict[str, slice]:
        """Slices of each modality within the concatenated output vector."""
        slices: dict[str, slice] = {}
        start = 0
        for modality, names in self.output_groups.items():
            slices[modality] = slice(start, start + len(names))
            start += len(names)
        return slices

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "input_names": list(self.input_names),
            "output_groups": {m: list(v) for m, v in self.output_groups.items()},
            "units": dict(self.units),
        }

    @classmethod
    def from_json_dict(cls, obj: dict[str, Any]) -> "FeatureSchema":
        try:
            return cls(
                input_names=tuple(obj["input_names"]),
                output_groups={m: tuple(v) for m, v in obj["output_groups"].items()},
                units=dict(obj.get("units", {})),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataFormatError(f"malformed schema object: {exc}") from exc

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureSchema):
            return NotImplemented
        return (
            self.input_names == other.input_names
            and self.output_groups == other.output_groups
            and self.units == other.units
        )


@dataclass
class Frame:
    """One time step of multimodal observation."""

    index: int
    time_s: float
    xi_input: np.ndarray
    xi_output: dict[str, np.ndarray]
    phase: float | None = None
    class_probs: tuple[float, float, float] | None = None
    gt_anomaly: bool | None = None

    def __post_init__(self):
        self.xi_input = np.asarray(self.xi_input, dtype=float)
        self.xi_output = {m: np.asarray(v, dtype=float) for m, v in self.xi_output.items()}
        if self.class_probs is not None:
            self.class_probs = tuple(float(p) for p in self.class_probs)

    def full_vector(self, schema: FeatureSchema) -> np.ndarray:
        """Concatenated ``[input, outputs...]`` vector in schema order."""
        parts = [self.xi_input]
        parts.extend(self.xi_output[m] for m in schema.modalities)
        return np.concatenate(parts)


def validate_frame(frame: Frame, schema: FeatureSchema, where: str = "") -> None:
    """Raise if *frame* violates *schema* or its own invariants."""
    ctx = f"{where}frame {frame.index}"
    if frame.index < 0:
        raise SchemaMismatchError(f"{ctx}: negative index")
    if frame.xi_input.shape != (schema.input_dim,):
        raise SchemaMismatchError(
            f"{ctx}: xi_input has length {frame.xi_input.shape}, "
            f"schema expects {schema.input_dim}"
        )
    if set(frame.xi_output) != set(schema.modalities):
        raise SchemaMismatchError(
            f"{ctx}: output modalities {sorted(frame.xi_output)} do not match "
            f"schema modalities {sorted(schema.modalities)}"
        )
    for modality, names in schema.output_groups.items():
        vec = frame.xi_output[modality]
        if vec.shape != (len(names),):
            raise SchemaMismatchError(
                f"{ctx}: modality {modality!r} has length {vec.shape[0]}, "
                f"schema expects {len(names)}"
            )
        if not np.all(np.isfinite(vec)):
            raise SchemaMismatchError(f"{ctx}: non-finite value in modality {modality!r}")
    if not np.all(np.isfinite(frame.xi_input)):
        raise SchemaMismatchError(f"{ctx}: non-finite value in xi_input")
    if frame.phase is not None and not (0.0 < frame.phase <= 1.0):
        raise SchemaMismatchError(f"{ctx}: phase {frame.phase} outside (0, 1]")
    if frame.class_probs is not None:
        probs = frame.class_probs
        if len(probs) != len(CLASS_LABELS):
            raise SchemaMismatchError(f"{ctx}: class_probs needs {len(CLASS_LABELS)} entries")
        if any(p < 0 for p in probs):
            raise SchemaMismatchError(f"{ctx}: negative class probability")
        if abs(sum(probs) - 1.0) > _CLASS_PROB_TOL:
            raise SchemaMismatchError(
                f"{ctx}: class_probs sum to {sum(probs):.8f}, expected 1"
            )


@dataclass
class Run:
    """A time-ordered recording of one skill execution."""

    frames: list[Frame]
    dt_s: float
    skill_id: str
    success: bool | None = None

    def validate(self, schema: FeatureSchema, where: str = "") -> None:
        if self.dt_s <= 0:
            raise SchemaMismatchError(f"{where}run {self.skill_id!r}: dt_s must be > 0")
        prev = -1
        for frame in self.frames:
            if frame.index <= prev:
                raise SchemaMismatchError(
                    f"{where}run {self.skill_id!r}: frame indices not strictly "
                    f"increasing at {frame.index}"
                )
            prev = frame.index
            validate_frame(frame, schema, where=f"{where}run {self.skill_id!r}, ")

    def gt_labels(self) -> list[bool]:
        """Ground-truth anomaly flags; missing labels count as normal."""
        return [bool(f.gt_anomaly) for f in self.frames]


@dataclass
class SkillDataset:
    """A schema plus the runs recorded under it."""

    schema: FeatureSchema
    runs: list[Run]
    provenance: str = "synthetic"

    def validate(self) -> None:
        if self.provenance not in PROVENANCES:
            raise SchemaMismatchError(
                f"unknown provenance {self.provenance!r}; expected one of {PROVENANCES}"
            )
        for i, run in enumerate(self.runs):
            run.validate(self.schema, where=f"run[{i}] ")

    @property
    def n_frames(self) -> int:
        return sum(len(r.frames) for r in self.runs)

    def iter_frames(self) -> Iterator[Frame]:
        for run in self.runs:
            yield from run.frames

    def feature_matrix(self) -> np.ndarray:
        """All frames stacked as an (n_frames, total_dim) array."""
        if self.n_frames == 0:
            return np.empty((0, self.schema.total_dim))
        return np.stack([f.full_vector(self.schema) for f in self.iter_frames()])


# -- JSONL encoding ------------------------------------------------------


def _frame_to_json_dict(frame: Frame) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "index": frame.index,
        "time_s": float(frame.time_s),
        "xi_input": [float(x) for x in frame.xi_input],
        "xi_output": {m: [float(x) for x in v] for m, v in frame.xi_output.items()},
    }
    if frame.phase is not None:
        obj["phase"] = float(frame.phase)
    if frame.class_probs is not None:
        obj["class_probs"] = [float(p) for p in frame.class_probs]
    if frame.gt_anomaly is not None:
        obj["gt_anomaly"] = bool(frame.gt_anomaly)
    return obj


def _frame_from_json_dict(obj: dict[str, Any], lineno: int) -> Frame:
    try:
        probs = obj.get("class_probs")
        return Frame(
            index=int(obj["index"]),
            time_s=float(obj["time_s"]),
            xi_input=obj["xi_input"],
            xi_output=obj["xi_output"],
            phase=None if obj.get("phase") is None else float(obj["phase"]),
            class_probs=None if probs is None else tuple(probs),
            gt_anomaly=None if obj.get("gt_anomaly") is None else bool(obj["gt_anomaly"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"line {lineno}: malformed frame: {exc}") from exc


def save_dataset(dataset: SkillDataset, path, meta: dict[str, Any] | None = None) -> None:
    """Write *dataset* as JSONL. Output bytes are deterministic."""
    dataset.validate()
    lines = []
    header: dict[str, Any] = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "provenance": dataset.provenance,
        "schema": dataset.schema.to_json_dict(),
    }
    if meta:
        header["meta"] = meta
    lines.append(json.dumps(header, separators=(",", ":")))
    for run in dataset.runs:
        run_header: dict[str, Any] = {
            "skill_id": run.skill_id,
            "dt_s": float(run.dt_s),
            "schema": dataset.schema.to_json_dict(),
        }
        if run.success is not None:
            run_header["success"] = bool(run.success)
        lines.append(json.dumps(run_header, separators=(",", ":")))
        for frame in run.frames:
            lines.append(json.dumps(_frame_to_json_dict(frame), separators=(",", ":")))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path, schema: FeatureSchema | None = None) -> SkillDataset:
    """Load a JSONL dataset, validating every record.

    If *schema* is given, the file's schema must match it exactly. Files
    without a dataset header (bare run streams) are accepted; their
    provenance defaults to ``"autonomous"``.
    """
    provenance = "autonomous"
    file_schema: FeatureSchema | None = schema
    runs: list[Run] = []
    current: Run | None = None

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise DataFormatError(f"{path}: line {lineno}: expected a JSON object")

            if obj.get("format") == DATASET_FORMAT:
                provenance = obj.get("provenance", provenance)
                file_schema = _reconcile_schema(file_schema, obj.get("schema"), path, lineno)
            elif "skill_id" in obj:
                current = _run_from_header(obj, path, lineno)
                file_schema = _reconcile_schema(file_schema, obj.get("schema"), path, lineno)
                runs.append(current)
            elif "index" in obj:
                if current is None:
                    raise DataFormatError(
                        f"{path}: line {lineno}: frame before any run header"
                    )
                current.frames.append(_frame_from_json_dict(obj, lineno))
            else:
                raise DataFormatError(
                    f"{path}: line {lineno}: unrecognized record (no format/skill_id/index key)"
                )

    if file_schema is None:
        raise DataFormatError(f"{path}: no schema found and none supplied")
    dataset = SkillDataset(schema=file_schema, runs=runs, provenance=provenance)
    try:
        dataset.validate()
    except SchemaMismatchError as exc:
        raise SchemaMismatchError(f"{path}: {exc}") from exc
    return dataset


def _run_from_header(obj: dict[str, Any], path, lineno: int) -> Run:
    try:
        return Run(
            frames=[],
            dt_s=float(obj["dt_s"]),
            skill_id=str(obj["skill_id"]),
            success=None if obj.get("success") is None else bool(obj["success"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: line {lineno}: malformed run header: {exc}") from exc


def _reconcile_schema(
    known: FeatureSchema | None, obj: Any, path, lineno: int
) -> FeatureSchema | None:
    if obj is None:
        return known
    parsed = FeatureSchema.from_json_dict(obj)
    if known is not None and parsed != known:
        raise SchemaMismatchError(
            f"{path}: line {lineno}: schema differs from the one in effect"
        )
    return parsed if known is None else known
