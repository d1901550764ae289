"""Command line entry point: ``drivepred {gen,train,eval,report} CONFIG``.

Exit codes: 0 success, 1 usage/config error, 2 assertion failure, 3 I/O error.
``MF_THREADS`` caps the number of worker processes used for training.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .errors import CorruptFile, DrivePredError, InvalidConfig, MissingCheckpoint, MissingData
from .evaluation import EvalReport, ModelKey, model_plan, score_test, split_subjects, subject_ids, train_models
from .features import extract_features, load_dataset, save_dataset, window_sequences
from .persist import atomic_write, load_checkpoint, load_profile, load_session, save_checkpoint, save_session, sha256_file
from .sim import generate_track, simulate_session

log = logging.getLogger("drivepred")

EXIT_OK, EXIT_USAGE, EXIT_ASSERT, EXIT_IO = 0, 1, 2, 3


def _paths(cfg: RunConfig) -> dict:
    root = Path(cfg.output_dir)
    return {
        "root": root,
        "sessions": root / "sessions",
        "datasets": root / "datasets",
        "checkpoints": root / "checkpoints",
        "history": root / "history",
        "reports": root / "reports",
    }


def cmd_gen(cfg: RunConfig) -> dict:
    """Simulate one session per subject; returns the manifest."""
    p = _paths(cfg)
    p["sessions"].mkdir(parents=True, exist_ok=True)
    track = generate_track(cfg.track, cfg.track_seed)
    track.save(p["root"] / "track.json")
    files = ["track.json"]
    for profile in cfg.profiles():
        sid = profile.subject_id
        session = simulate_session(track, profile, cfg.duration, cfg.dt)
        save_session(session, p["sessions"] / f"subject_{sid}.csv", p["sessions"] / f"subject_{sid}.json")
        files += [f"sessions/subject_{sid}.csv", f"sessions/subject_{sid}.json"]
        log.info("subject %d: %d rows", sid, len(session))
    manifest = {"files": {f: sha256_file(p["root"] / f) for f in files}}
    atomic_write(p["root"] / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def build_datasets(cfg: RunConfig) -> list:
    """Sessions -> windowed datasets, persisted and read back in float32."""
    p = _paths(cfg)
    p["datasets"].mkdir(parents=True, exist_ok=True)
    out = []
    for sid in range(1, cfg.subjects.count + 1):
        csv_path = p["sessions"] / f"subject_{sid}.csv"
        prof_path = p["sessions"] / f"subject_{sid}.json"
        if not csv_path.exists() or not prof_path.exists():
            raise MissingData(f"{csv_path} not found; run `gen` first")
        session = load_session(csv_path, load_profile(prof_path), cfg.dt)
        f = cfg.features
        ds = window_sequences(extract_features(session, f.set_id), session.label, f.t_wi, f.t_wo, f.stride, sid)
        path = p["datasets"] / f"subject_{sid}.mfw"
        save_dataset(ds, path)
        out.append(load_dataset(path))
    return out


def load_datasets(cfg: RunConfig) -> list:
    p = _paths(cfg)
    out = []
    for sid in range(1, cfg.subjects.count + 1):
        path = p["datasets"] / f"subject_{sid}.mfw"
        if not path.exists():
            raise MissingData(f"{path} not found; run `train` first")
        out.append(load_dataset(path))
    return out


def training_plan(cfg: RunConfig, subjects: list) -> list[ModelKey]:
    mode = cfg.protocol.train_mode
    if mode == "individual":
        return model_plan([1], subjects)
    if mode == "concatenated":
        return model_plan([3], subjects, cfg.protocol.concat_sizes)
    return model_plan(cfg.protocol.tests, subjects, cfg.protocol.concat_sizes)


def cmd_train(cfg: RunConfig) -> list[str]:
    p = _paths(cfg)
    subjects = build_datasets(cfg)
    pcfg = cfg.protocol_config()
    splits = split_subjects(subjects, pcfg.split)
    plan = training_plan(cfg, subjects)
    models, histories = train_models(plan, splits, pcfg)
    p["checkpoints"].mkdir(parents=True, exist_ok=True)
    p["history"].mkdir(parents=True, exist_ok=True)
    for key in plan:
        save_checkpoint(models[key.model_id], p["checkpoints"] / f"{key.model_id}.json", cfg.model.seed)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for row in histories[key.model_id]:
            w.writerow([row["epoch"], repr(row["train_loss"]), repr(row.get("val_loss", float("nan")))])
        atomic_write(p["history"] / f"{key.model_id}.csv", buf.getvalue())
        log.info("trained %s", key.model_id)
    return [k.model_id for k in plan]


def cmd_eval(cfg: RunConfig) -> dict:
    p = _paths(cfg)
    subjects = load_datasets(cfg)
    pcfg = cfg.protocol_config()
    splits = split_subjects(subjects, pcfg.split)
    models = {}
    for key in model_plan(cfg.protocol.tests, subjects, cfg.protocol.concat_sizes):
        path = p["checkpoints"] / f"{key.model_id}.json"
        if not path.exists():
            raise MissingCheckpoint(f"{path} not found; run `train` first")
        models[key.model_id] = load_checkpoint(path)
    ids = subject_ids(subjects)
    p["reports"].mkdir(parents=True, exist_ok=True)
    reports = {}
    for t in sorted(set(cfg.protocol.tests)):
        rep = score_test(t, models, splits, ids, cfg.protocol.concat_sizes)
        rep.write(p["reports"] / f"test{t}.csv", p["reports"] / f"test{t}.json")
        reports[t] = rep
    return reports


def check_thresholds(reports: dict, t_wo: int, ident: float | None, pred: float | None) -> list[str]:
    failures = []
    for t, rep in sorted(reports.items()):
        agg = rep.aggregates
        if ident is not None and agg[0]["mean"] < ident:
            failures.append(f"test {t}: identification F1 {agg[0]['mean']:.4f} < {ident}")
        if pred is not None and agg[t_wo - 1]["mean"] < pred:
            failures.append(f"test {t}: prediction F1 {agg[t_wo - 1]['mean']:.4f} < {pred}")
    return failures


def load_reports(cfg: RunConfig) -> dict:
    p = _paths(cfg)
    reports = {}
    for t in sorted(set(cfg.protocol.tests)):
        path = p["reports"] / f"test{t}.csv"
        if not path.exists():
            raise MissingData(f"{path} not found; run `eval` first")
        reports[t] = EvalReport.from_csv(path.read_text(), t)
    return reports


def cmd_report(cfg: RunConfig) -> list[Path]:
    """Per-t_wo statistics tables, one CSV per test."""
    p = _paths(cfg)
    written = []
    for t, rep in load_reports(cfg).items():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["two", "mean", "std", "min", "max", "n"])
        for two, a in rep.aggregates.items():
            w.writerow([two, repr(a["mean"]), repr(a["std"]), repr(a["min"]), repr(a["max"]), a["n"]])
        path = p["reports"] / f"stats_test{t}.csv"
        atomic_write(path, buf.getvalue())
        written.append(path)
    return written


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drivepred", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("gen", "train", "eval", "report"):
        sp = sub.add_parser(name)
        sp.add_argument("config", type=Path)
        if name == "eval":
            sp.add_argument("--assert", dest="check", action="store_true", help="exit 2 if a threshold is missed")
            sp.add_argument("--min-identification", type=float, default=None)
            sp.add_argument("--min-prediction", type=float, default=None)
    return ap


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "gen":
            cmd_gen(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "report":
            for path in cmd_report(cfg):
                print(path)
        else:
            reports = cmd_eval(cfg)
            for t, rep in reports.items():
                agg = rep.aggregates
                print(f"test {t}: identification F1 {agg[0]['mean']:.4f}, prediction F1 (t_wo={cfg.features.t_wo - 1}) {agg[cfg.features.t_wo - 1]['mean']:.4f}")
            if args.check:
                ident = args.min_identification if args.min_identification is not None else cfg.thresholds.identification_f1
                pred = args.min_prediction if args.min_prediction is not None else cfg.thresholds.prediction_f1
                failures = check_thresholds(reports, cfg.features.t_wo, ident, pred)
                for f in failures:
                    print(f"FAIL {f}", file=sys.stderr)
                if failures:
                    return EXIT_ASSERT
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, MissingData, MissingCheckpoint, CorruptFile) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DrivePredError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
