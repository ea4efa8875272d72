"""Command-line interface: train, detect, eval, simulate, validate-schedule.

Option precedence is flags over a JSON config file (``--config``) over
built-in defaults (window 8, alpha 5, IoU threshold 0.5, seed 0). Every
output file carries a metadata block with the tool version, the seed, and
short digests of the input files. Set ``ANOMOE_LOG=debug|info|warning``
to control log verbosity. Exit codes: 0 success, 1 runtime or data error,
2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np

import anomoe
from anomoe.classifier import load_probability_stream, save_probability_stream
from anomoe.data import load_dataset, save_dataset
from anomoe.errors import AnomoeError, DataFormatError
from anomoe.fusion import (
    TRACKS,
    PipelineConfig,
    run_pipeline,
    read_fused_stream,
    write_fused_stream,
)
from anomoe.gmm import EmConfig, calibrate_thresholds, fit_em, load_model, save_model
from anomoe.gmr import ANOMALY, verdict_to_json_dict
from anomoe.metrics import evaluate, format_table, save_report
from anomoe.phase import PhaseConfig, load_schedule, save_schedule, validate_schedule
from anomoe.scenarios import generate_suite, load_suite, skill_schedule, suite_from_json_dict

log = logging.getLogger("anomoe")

DEFAULTS: dict[str, Any] = {
    "window": 8,
    "alpha": 5.0,
    "iou": 0.5,
    "seed": 0,
    "max_iter": 300,
    "tol": 1e-7,
}


def _setup_logging() -> None:
    name = os.environ.get("ANOMOE_LOG", "warning").strip().upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataFormatError(f"{path}: config must be a JSON object")
    return obj


def _opt(args: argparse.Namespace, config: dict[str, Any], key: str) -> Any:
    """Flag value if given, else config-file value, else built-in default."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return DEFAULTS.get(key)


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()[:12]


def _meta(seed: int | None = None, **inputs) -> dict[str, Any]:
    meta: dict[str, Any] = {"tool": "anomoe", "version": anomoe.__version__}
    if seed is not None:
        meta["seed"] = seed
    digests = {}
    for name, path in inputs.items():
        if path is not None:
            digests[name] = {"path": str(path), "sha256_12": _digest(path)}
    if digests:
        meta["inputs"] = digests
    return meta


# -- train -----------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    k = _opt(args, config, "k")
    if k is None:
        raise DataFormatError("number of components required (--k or config 'k')")
    alpha = float(_opt(args, config, "alpha"))
    seed = int(_opt(args, config, "seed"))
    em = EmConfig(
        seed=seed,
        max_iter=int(_opt(args, config, "max_iter")),
        tol=float(_opt(args, config, "tol")),
    )
    dataset = load_dataset(args.data)
    model = fit_em(dataset, int(k), em, alpha=alpha)
    model = calibrate_thresholds(model, dataset)

    trace = model.ll_trace
    print(f"fit K={k} on {dataset.n_frames} frames ({len(dataset.runs)} runs)")
    print(
        f"log-likelihood: start {trace[0]:.4f}, end {trace[-1]:.4f} "
        f"({len(trace)} iterations)"
    )
    assert model.thresholds is not None
    mods = list(model.schema.modalities)
    print("thresholds (d_max per component):")
    print("  comp  " + "  ".join(f"{m:>10}" for m in mods))
    for j in range(model.n_components):
        row = "  ".join(f"{model.thresholds[m][j]:10.4f}" for m in mods)
        print(f"  {j:4d}  {row}")
    if model.unvisited_components:
        log.warning(
            "components never visited during calibration: %s",
            list(model.unvisited_components),
        )
        print(f"unvisited components: {list(model.unvisited_components)}")

    save_model(model, args.out, meta=_meta(seed=seed, data=args.data))
    print(f"wrote {args.out}")
    return 0


# -- detect ------------------------------------------------------------------


def _probs_for_run(args: argparse.Namespace, data_path: Path, skill_id: str):
    if args.probs:
        return load_probability_stream(args.probs)
    probs_dir = Path(args.probs_dir) if args.probs_dir else data_path.parent / "probs"
    candidate = probs_dir / f"{skill_id}.jsonl"
    if candidate.exists():
        return load_probability_stream(candidate)
    log.info("no probability stream for %s; classifier runs absent", skill_id)
    return {}


def cmd_detect(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    window = int(_opt(args, config, "window"))
    model = load_model(args.model)
    schedule = load_schedule(args.schedule)
    problems = validate_schedule(schedule)
    if problems:
        raise DataFormatError(f"{args.schedule}: " + "; ".join(problems))
    dataset = load_dataset(args.data, schema=model.schema)
    data_path = Path(args.data)

    phase_cfg = None
    tau = _opt(args, config, "tau")
    alpha_s = _opt(args, config, "alpha_s")
    if tau is not None and alpha_s is not None:
        phase_cfg = PhaseConfig(tau=float(tau), alpha_s=float(alpha_s))
    pipe_cfg = PipelineConfig(window=window, phase_config=phase_cfg)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = _meta(model=args.model, data=args.data, schedule=args.schedule)
    meta["window"] = window

    for run in dataset.runs:
        probs = _probs_for_run(args, data_path, run.skill_id)
        result = run_pipeline(model, schedule, run, probs, pipe_cfg)
        write_fused_stream(result, out_dir / f"fused_{run.skill_id}.jsonl", meta=meta)
        for track, verdicts in (
            ("gmr", result.gmr_verdicts),
            ("vlm", result.vlm_verdicts),
        ):
            with open(out_dir / f"{track}_{run.skill_id}.jsonl", "w", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {"format": f"{track}-verdicts", "version": 1, "meta": meta},
                        separators=(",", ":"),
                    )
                    + "\n"
                )
                for index, v in zip(result.indices, verdicts):
                    fh.write(
                        json.dumps(verdict_to_json_dict(index, v), separators=(",", ":"))
                        + "\n"
                    )
        onsets = {}
        for track in TRACKS:
            hit = next(
                (i for i, v in zip(result.indices, result.filtered[track]) if v), None
            )
            onsets[track] = "-" if hit is None else str(hit)
        print(
            f"{run.skill_id}: first anomaly frame "
            f"gmr={onsets['gmr']} vlm={onsets['vlm']} moe={onsets['moe']}"
        )
    print(f"wrote {3 * len(dataset.runs)} stream files to {out_dir}")
    return 0


# -- eval --------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    iou = float(_opt(args, config, "iou"))
    dataset = load_dataset(args.data)
    if all(f.gt_anomaly is None for f in dataset.iter_frames()):
        raise DataFormatError(f"{args.data}: dataset carries no ground-truth labels")
    det_dir = Path(args.detections)

    per_track_runs: dict[str, list[tuple[list[int], list[int], float]]] = {
        t: [] for t in TRACKS
    }
    for run in dataset.runs:
        stream_path = det_dir / f"fused_{run.skill_id}.jsonl"
        if not stream_path.exists():
            raise DataFormatError(f"no detection stream for run {run.skill_id!r}")
        records = read_fused_stream(stream_path)
        by_index = {rec["index"]: rec for rec in records}
        gt = []
        preds: dict[str, list[int]] = {t: [] for t in TRACKS}
        for frame in run.frames:
            rec = by_index.get(frame.index)
            if rec is None:
                raise DataFormatError(
                    f"{stream_path}: missing frame {frame.index} of {run.skill_id!r}"
                )
            gt.append(int(bool(frame.gt_anomaly)))
            for t in TRACKS:
                preds[t].append(int(rec[t] == ANOMALY))
        for t in TRACKS:
            per_track_runs[t].append((gt, preds[t], run.dt_s))

    reports = {t: evaluate(per_track_runs[t], iou_threshold=iou) for t in TRACKS}
    print(format_table(reports))
    if args.out:
        save_report(reports, args.out, meta=_meta(data=args.data))
        print(f"wrote {args.out}")
    return 0


# -- simulate ----------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    if bool(args.suite) == bool(args.archetype):
        raise DataFormatError("give exactly one of --suite or --archetype")
    if args.suite:
        suite = load_suite(args.suite)
    else:
        run_row: dict[str, Any] = {"archetype": args.archetype, "role": "test"}
        if args.seed is not None:
            run_row["seed"] = args.seed
        for key in ("magnitude", "onset_s", "offset_s", "duration_s", "dt_s"):
            value = getattr(args, key)
            if value is not None:
                run_row[key] = value
        suite = suite_from_json_dict(
            {
                "name": f"single-{args.archetype}",
                "skill": args.skill,
                "k": 2,
                "alpha": float(DEFAULTS["alpha"]),
                "runs": [run_row],
            }
        )

    bundle = generate_suite(suite)
    out_dir = Path(args.out_dir)
    (out_dir / "probs").mkdir(parents=True, exist_ok=True)

    meta = _meta(seed=args.seed)
    meta["suite"] = suite.name
    save_dataset(bundle.dataset, out_dir / "runs.jsonl", meta=meta)
    train = bundle.train_dataset()
    if train.runs:
        save_dataset(train, out_dir / "train.jsonl", meta=meta)
    test = bundle.test_dataset()
    if test.runs:
        save_dataset(test, out_dir / "test.jsonl", meta=meta)
    for skill_id, stream in bundle.probs.items():
        save_probability_stream(stream, out_dir / "probs" / f"{skill_id}.jsonl")
    save_schedule(suite.schedule(), out_dir / "schedule.json")
    manifest = dict(bundle.manifest)
    manifest["meta"] = meta
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")

    archetypes = [r["archetype"] for r in bundle.manifest["runs"]]
    print(
        f"wrote {len(bundle.dataset.runs)} runs "
        f"({', '.join(sorted(set(archetypes)))}) to {out_dir}"
    )
    return 0


# -- validate-schedule ---------------------------------------------------------


def cmd_validate_schedule(args: argparse.Namespace) -> int:
    if args.skill:
        schedule = skill_schedule(args.skill)
    else:
        schedule = load_schedule(args.schedule)
    problems = validate_schedule(schedule)
    if problems:
        for p in problems:
            print(f"problem: {p}")
        return 1
    print("schedule ok: intervals partition (0, 1]")
    return 0


# -- wiring --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anomoe",
        description="Mixture-of-experts anomaly detection for robot-skill recordings.",
    )
    parser.add_argument("--version", action="version", version=f"anomoe {anomoe.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a mixture model and calibrate thresholds")
    p.add_argument("--data", required=True, help="training dataset (JSONL)")
    p.add_argument("--out", required=True, help="output model file (JSON)")
    p.add_argument("--k", type=int, help="number of mixture components")
    p.add_argument("--alpha", type=float, help="confidence gain (default 5)")
    p.add_argument("--seed", type=int, help="EM seed (default 0)")
    p.add_argument("--max-iter", type=int, help="EM iteration cap (default 300)")
    p.add_argument("--tol", type=float, help="EM relative improvement tolerance")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run the detector over recorded runs")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--data", required=True, help="runs to scan (JSONL)")
    p.add_argument("--schedule", required=True, help="expected-state schedule (JSON)")
    p.add_argument("--out-dir", required=True, help="directory for verdict streams")
    p.add_argument("--probs", help="probability stream for a single-run dataset")
    p.add_argument(
        "--probs-dir",
        help="directory of <skill_id>.jsonl probability streams "
        "(default: probs/ next to --data)",
    )
    p.add_argument("--window", type=int, help="majority filter window (default 8)")
    p.add_argument("--tau", type=float, help="phase duration for frames without phase")
    p.add_argument("--alpha-s", type=float, help="phase decay gain for frames without phase")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score detection streams against ground truth")
    p.add_argument("--data", required=True, help="dataset with gt_anomaly labels")
    p.add_argument("--detections", required=True, help="directory from `detect`")
    p.add_argument("--iou", type=float, help="segment match threshold (default 0.5)")
    p.add_argument("--out", help="write the report JSON here")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="generate a synthetic scenario bundle")
    p.add_argument("--suite", help="suite JSON path or bundled name (pouring, grasping)")
    p.add_argument("--archetype", help="generate a single run of this archetype instead")
    p.add_argument("--skill", default="pouring", help="skill for --archetype mode")
    p.add_argument("--seed", type=int, help="seed for --archetype mode")
    p.add_argument("--magnitude", type=float, help="anomaly strength for --archetype mode")
    p.add_argument("--onset-s", type=float, dest="onset_s", help="anomaly onset seconds")
    p.add_argument("--offset-s", type=float, dest="offset_s", help="anomaly offset seconds")
    p.add_argument("--duration-s", type=float, dest="duration_s", help="run length seconds")
    p.add_argument("--dt-s", type=float, dest="dt_s", help="sampling period seconds")
    p.add_argument("--out-dir", required=True, help="bundle output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate-schedule", help="check a schedule partitions (0, 1]")
    p.add_argument("--schedule", help="schedule JSON file")
    p.add_argument("--skill", help="check a built-in skill schedule instead")
    p.set_defaults(func=cmd_validate_schedule)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "validate-schedule" and not (args.schedule or args.skill):
        parser.error("validate-schedule needs --schedule or --skill")
    try:
        return int(args.func(args))
    except AnomoeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except np.linalg.LinAlgError as exc:
        print(f"error: linear algebra failure: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
