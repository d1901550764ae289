"""Known/unknown-subject test protocol, F1 scoring and per-t_wo statistics.

Model ids: ``S<i>`` is trained on subject i alone, ``SC<a>-<b>`` on the pooled
training splits of the first b subjects (a is the first subject's id).
Pooled validation sets are reported under subject id ``<a>..<b>``.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import MlpConfig, fit_shallow
from .errors import (
    ClassTooSmall,
    EmptyReport,
    InsufficientSubjects,
    LengthMismatch,
    ShapeMismatch,
)
from .features import FeatureSet, WindowedDataset
from .nn import SequenceModel, TrainConfig, fit_bilstm
from .track import N_CLASSES

FAMILIES = ("bilstm", "mlp", "extra_trees")


# --- splitting ----------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    seed: int = 0


def stratified_split(ds: WindowedDataset, spec: SplitSpec = SplitSpec()) -> tuple[WindowedDataset, WindowedDataset]:
    """Per-class shuffled partition keyed on the label at each window's present step."""
    labels = ds.current_label
    rng = np.random.default_rng(spec.seed)
    train_idx, val_idx = [], []
    for c in range(N_CLASSES):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise ClassTooSmall(f"class {c} has {idx.size} window(s)")
        perm = rng.permutation(idx)
        k = min(max(int(math.floor(spec.train_fraction * idx.size + 0.5)), 1), idx.size - 1)
        train_idx.append(perm[:k])
        val_idx.append(perm[k:])
    return ds.subset(np.sort(np.concatenate(train_idx))), ds.subset(np.sort(np.concatenate(val_idx)))


# --- F1 -----------------------------------------------------------------------


def f1_scores(predicted, truth, n_classes: int = N_CLASSES) -> tuple[np.ndarray, float]:
    """Per-class F1 (0 where precision + recall is 0) and their unweighted mean."""
    predicted = np.asarray(predicted, dtype=np.int64).ravel()
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if predicted.shape != truth.shape:
        raise LengthMismatch(f"{predicted.shape} vs {truth.shape}")
    if predicted.size == 0:
        raise LengthMismatch("no labels")
    cm = np.bincount(truth * n_classes + predicted, minlength=n_classes * n_classes).reshape(n_classes, n_classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    precision = np.divide(tp, tp + fp, out=np.zeros(n_classes), where=(tp + fp) > 0)
    recall = np.divide(tp, tp + fn, out=np.zeros(n_classes), where=(tp + fn) > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n_classes), where=denom > 0)
    return f1, float(f1.mean())


def evaluate_predictions(predicted: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """N x t_wo label arrays -> t_wo x 3 per-class F1."""
    if predicted.shape != truth.shape:
        raise ShapeMismatch(f"{predicted.shape} vs {truth.shape}")
    return np.stack([f1_scores(predicted[:, k], truth[:, k])[0] for k in range(truth.shape[1])])


def predict_labels(model, X: np.ndarray) -> np.ndarray:
    if isinstance(model, SequenceModel):
        return model.predict_proba(X).argmax(axis=2)
    return model.predict_labels(X)


def evaluate_sequence_model(model, dataset: WindowedDataset) -> np.ndarray:
    """t_wo x 3 F1 table; row 0 is identification, later rows prediction."""
    if isinstance(model, SequenceModel) and (dataset.d != model.d or dataset.t_wo != model.t_wo):
        raise ShapeMismatch("dataset dims do not match the model")
    return evaluate_predictions(predict_labels(model, dataset.X), dataset.labels)


# --- reports --------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    model_id: str
    subject_id: str
    two: int
    manoeuvre: int
    f1: float
    known: bool


@dataclass
class EvalReport:
    test_id: int
    cells: list = field(default_factory=list)

    @property
    def aggregates(self) -> dict:
        return aggregate_per_two(self)

    def pairs(self) -> list[tuple[str, str]]:
        return sorted({(c.model_id, c.subject_id) for c in self.cells}, key=_pair_key)

    def mean_f1(self, model_ids=None, subject_ids=None, two=None) -> float:
        sel = [
            c.f1
            for c in self.cells
            if (model_ids is None or c.model_id in model_ids)
            and (subject_ids is None or c.subject_id in subject_ids)
            and (two is None or c.two == two)
        ]
        if not sel:
            raise EmptyReport("no cells match")
        return math.fsum(sel) / len(sel)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model_id", "subject_id", "two", "manoeuvre", "f1", "known"])
        for c in self.cells:
            w.writerow([c.model_id, c.subject_id, c.two, c.manoeuvre, repr(float(c.f1)), int(c.known)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, test_id: int = 0) -> "EvalReport":
        rows = csv.DictReader(io.StringIO(text))
        cells = [
            Cell(r["model_id"], r["subject_id"], int(r["two"]), int(r["manoeuvre"]), float(r["f1"]), bool(int(r["known"])))
            for r in rows
        ]
        return cls(test_id, cells)

    def summary(self) -> dict:
        agg = self.aggregates
        return {
            "test_id": self.test_id,
            "n_cells": len(self.cells),
            "n_pairs": len(self.pairs()),
            "per_two": {str(k): v for k, v in agg.items()},
        }

    def write(self, csv_path: str | Path, json_path: str | Path | None = None) -> None:
        _atomic_write(Path(csv_path), self.to_csv())
        if json_path is not None:
            _atomic_write(Path(json_path), json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _pair_key(pair):
    return tuple(_natural(p) for p in pair)


def _natural(s: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s)]


def aggregate_per_two(report: EvalReport) -> dict:
    """Per t_wo: mean/std/min/max over (model, subject) pairs of the
    manoeuvre-averaged F1. std is the population std."""
    if not report.cells:
        raise EmptyReport("report has no cells")
    per_pair: dict = {}
    for c in report.cells:
        per_pair.setdefault(c.two, {}).setdefault((c.model_id, c.subject_id), []).append(c.f1)
    out = {}
    for two in sorted(per_pair):
        vals = np.array([math.fsum(v) / len(v) for _, v in sorted(per_pair[two].items(), key=lambda kv: _pair_key(kv[0]))])
        out[two] = {
            "mean": float(vals.mean()),
            "std": float(vals.std()),
            "min": float(vals.min()),
            "max": float(vals.max()),
            "n": int(vals.size),
        }
    return out


def _cells(model_id: str, subject_id: str, table: np.ndarray, known: bool) -> list[Cell]:
    return [
        Cell(model_id, subject_id, k, m, float(table[k, m]), known)
        for k in range(table.shape[0])
        for m in range(table.shape[1])
    ]


# --- protocol -------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolConfig:
    family: str = "bilstm"
    hidden: int = 32
    train: TrainConfig = TrainConfig()
    split: SplitSpec = SplitSpec()
    monitor_fraction: float = 0.1  # share of each training split held out for checkpoint selection
    concat_sizes: tuple[int, ...] | None = None  # b values for tests 3/4; None = 1..N
    n_pre: int = 30
    mlp: MlpConfig = MlpConfig()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")


@dataclass(frozen=True)
class ModelKey:
    model_id: str
    members: tuple[int, ...]  # positions in the subject list


def _sid(ds: WindowedDataset) -> str:
    return str(int(ds.subject_id[0]))


def subject_ids(subjects: list[WindowedDataset]) -> list[str]:
    return [_sid(s) for s in subjects]


def concat_id(ids: list[str], b: int) -> str:
    return f"SC{ids[0]}-{ids[b - 1]}"


def pool_id(ids: list[str], b: int) -> str:
    return f"{ids[0]}..{ids[b - 1]}"


def model_plan(test_ids, subjects: list[WindowedDataset], concat_sizes=None) -> list[ModelKey]:
    ids = subject_ids(subjects)
    n = len(ids)
    plan = []
    if {1, 2} & set(test_ids):
        plan += [ModelKey(f"S{ids[i]}", (i,)) for i in range(n)]
    if {3, 4} & set(test_ids):
        sizes = range(1, n + 1) if concat_sizes is None else concat_sizes
        for b in sizes:
            if not 1 <= b <= n:
                raise ValueError(f"concatenation size {b} outside 1..{n}")
            plan.append(ModelKey(concat_id(ids, b), tuple(range(b))))
    return plan


def split_subjects(subjects: list[WindowedDataset], spec: SplitSpec) -> list[tuple[WindowedDataset, WindowedDataset]]:
    return [stratified_split(s, spec) for s in subjects]


def train_one(family: str, train_ds: WindowedDataset, config: ProtocolConfig):
    """Train one model of ``family``; returns (model, history)."""
    if family == "bilstm":
        fit, monitor = stratified_split(train_ds, SplitSpec(1.0 - config.monitor_fraction, config.split.seed + 1))
        res = fit_bilstm(fit, config.hidden, config.train, monitor)
        return res.model, res.history
    model = fit_shallow(family, train_ds.X, train_ds.labels, seed=config.train.seed, n_pre=config.n_pre, mlp=config.mlp)
    return model, []


def _train_job(args):
    family, ds, config = args
    return train_one(family, ds, config)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("MF_THREADS", "1")))
    except ValueError:
        return 1


def train_models(plan: list[ModelKey], splits, config: ProtocolConfig) -> tuple[dict, dict]:
    """Train every planned model; returns ({id: model}, {id: history}).

    Jobs are independent and results are merged in plan order, so the
    outcome does not depend on ``MF_THREADS``.
    """
    jobs = [(config.family, WindowedDataset.concat([splits[i][0] for i in key.members]), config) for key in plan]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_train_job, jobs))
    else:
        results = [_train_job(j) for j in jobs]
    models = {k.model_id: r[0] for k, r in zip(plan, results)}
    histories = {k.model_id: r[1] for k, r in zip(plan, results)}
    return models, histories


def score_test(test_id: int, models: dict, splits, ids: list[str], concat_sizes=None) -> EvalReport:
    n = len(ids)
    vals = [v for _, v in splits]
    report = EvalReport(test_id)
    sizes = list(range(1, n + 1)) if concat_sizes is None else list(concat_sizes)
    if test_id == 1:
        for i in range(n):
            report.cells += _cells(f"S{ids[i]}", ids[i], evaluate_sequence_model(models[f"S{ids[i]}"], vals[i]), True)
    elif test_id == 2:
        for i in range(n):
            m = models[f"S{ids[i]}"]
            for j in range(n):
                if j != i:
                    report.cells += _cells(f"S{ids[i]}", ids[j], evaluate_sequence_model(m, vals[j]), False)
    elif test_id == 3:
        for b in sizes:
            pooled = WindowedDataset.concat(vals[:b])
            report.cells += _cells(concat_id(ids, b), pool_id(ids, b), evaluate_sequence_model(models[concat_id(ids, b)], pooled), True)
    elif test_id == 4:
        for b in sizes:
            m = models[concat_id(ids, b)]
            for j in range(n):
                report.cells += _cells(concat_id(ids, b), ids[j], evaluate_sequence_model(m, vals[j]), j < b)
    else:
        raise ValueError(f"unknown test {test_id}")
    return report


def run_protocol(test_ids, subjects: list[WindowedDataset], config: ProtocolConfig = ProtocolConfig()):
    """Run several tests sharing one set of trained models.

    Returns (reports by test id, models, histories).
    """
    if len(subjects) < 2:
        raise InsufficientSubjects("the protocol needs at least two subjects")
    set_ids = {s.set_id for s in subjects}
    if len(set_ids) != 1:
        raise ShapeMismatch("subjects use different feature sets")
    splits = split_subjects(subjects, config.split)
    plan = model_plan(test_ids, subjects, config.concat_sizes)
    models, histories = train_models(plan, splits, config)
    ids = subject_ids(subjects)
    reports = {t: score_test(t, models, splits, ids, config.concat_sizes) for t in sorted(set(test_ids))}
    return reports, models, histories


def run_test_protocol(test_id: int, subjects: list[WindowedDataset], family: str, set_id: FeatureSet | int, config: ProtocolConfig = ProtocolConfig()) -> EvalReport:
    if any(s.set_id != FeatureSet(set_id) for s in subjects):
        raise ShapeMismatch(f"datasets are not windowed from {FeatureSet(set_id).name}")
    if family != config.family:
        config = dataclasses.replace(config, family=family)
    reports, _, _ = run_protocol([test_id], subjects, config)
    return reports[test_id]
