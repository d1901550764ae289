"""File formats: session CSV + profile JSON, model checkpoints, manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from pathlib import Path

import numpy as np

from .baselines import ExtraTreesModel, MlpModel, ShallowPredictor, Tree
from .errors import CorruptFile, FormatVersionMismatch
from .features import FeatureSet, Scaler
from .nn import SequenceModel
from .sim import DriverProfile, Session

SESSION_HEADER = (
    "t,s,x,y,heading,v,steer,gas,ssx,ssy,ssz,lsx,lsy,lsz,rsx,rsy,rsz,lex,ley,lez,rex,rey,rez,label".split(",")
)
FORMAT_VERSION = 1


def atomic_write(path: str | Path, data: str | bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        tmp.write_text(data)
    else:
        tmp.write_bytes(data)
    os.replace(tmp, path)


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- sessions -------------------------------------------------------------------


def session_to_csv(session: Session) -> str:
    cols = np.column_stack(
        [session.t, session.s, session.x, session.y, session.heading, session.v, session.steer, session.gas, session.joints.reshape(len(session), 15)]
    )
    buf = io.StringIO()
    buf.write(",".join(SESSION_HEADER) + "\n")
    for row, lab in zip(cols, session.label):
        buf.write(",".join(f"{v:.9g}" for v in row) + f",{int(lab)}\n")
    return buf.getvalue()


def save_session(session: Session, csv_path: str | Path, profile_path: str | Path | None = None) -> None:
    atomic_write(csv_path, session_to_csv(session))
    if profile_path is not None:
        atomic_write(profile_path, json.dumps(session.profile.to_dict(), indent=2, sort_keys=True) + "\n")


def load_profile(path: str | Path) -> DriverProfile:
    return DriverProfile.from_dict(json.loads(Path(path).read_text()))


def load_session(csv_path: str | Path, profile: DriverProfile, dt: float | None = None) -> Session:
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SESSION_HEADER:
            raise CorruptFile(f"{csv_path}: unexpected header")
        rows = [r for r in reader]
    if not rows:
        raise CorruptFile(f"{csv_path}: no rows")
    try:
        data = np.array([[float(v) for v in r[:-1]] for r in rows])
        labels = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise CorruptFile(f"{csv_path}: {exc}") from exc
    if data.shape[1] != 23:
        raise CorruptFile(f"{csv_path}: expected 23 numeric columns")
    if dt is None:
        dt = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 1.0 / 30.0
    return Session(
        profile=profile,
        dt=dt,
        t=data[:, 0].copy(),
        s=data[:, 1].copy(),
        x=data[:, 2].copy(),
        y=data[:, 3].copy(),
        heading=data[:, 4].copy(),
        v=data[:, 5].copy(),
        steer=data[:, 6].copy(),
        gas=data[:, 7].copy(),
        joints=data[:, 8:23].reshape(-1, 5, 3).copy(),
        label=labels,
    )


# --- checkpoints ------------------------------------------------------------------


def _digest(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _arrays(d: dict) -> dict:
    return {k: np.asarray(v).tolist() for k, v in d.items()}


def _tree_to_dict(t: Tree) -> dict:
    return _arrays({"feature": t.feature, "threshold": t.threshold, "left": t.left, "right": t.right, "value": t.value, "n_samples": t.n_samples})


def _tree_from_dict(d: dict) -> Tree:
    return Tree(
        np.array(d["feature"], dtype=np.int64),
        np.array(d["threshold"], dtype=np.float64),
        np.array(d["left"], dtype=np.int64),
        np.array(d["right"], dtype=np.int64),
        np.array(d["value"], dtype=np.float64).reshape(len(d["feature"]), -1),
        np.array(d["n_samples"], dtype=np.int64),
    )


def _shallow_to_dict(m) -> dict:
    if isinstance(m, MlpModel):
        return {
            "sizes": list(m.sizes),
            "weights": _arrays(m.params),
            "scaler": m.scaler.to_dict() if m.scaler else None,
        }
    return {
        "n_classes": m.n_classes,
        "n_estimators": m.n_estimators,
        "min_samples_leaf": m.min_samples_leaf,
        "n_features": m.n_features,
        "trees": [_tree_to_dict(t) for t in m.trees],
    }


def _shallow_from_dict(kind: str, d: dict):
    if kind == "mlp":
        return MlpModel(
            {k: np.array(v, dtype=np.float64) for k, v in d["weights"].items()},
            tuple(d["sizes"]),
            Scaler.from_dict(d["scaler"]) if d["scaler"] else None,
        )
    return ExtraTreesModel([_tree_from_dict(t) for t in d["trees"]], d["n_classes"], d["n_estimators"], d["min_samples_leaf"], d["n_features"])


def checkpoint_dict(model, training_seed: int = 0) -> dict:
    if isinstance(model, SequenceModel):
        body = {
            "format_version": FORMAT_VERSION,
            "kind": "bilstm",
            "H": model.hidden,
            "d": model.d,
            "t_wi": model.t_wi,
            "t_wo": model.t_wo,
            "set_id": int(model.set_id),
            "dropout_rate": model.dropout_rate,
            "scaler": model.scaler.to_dict() if model.scaler else None,
            "weights": _arrays(model.params),
            "training_seed": training_seed,
        }
    elif isinstance(model, ShallowPredictor):
        body = {
            "format_version": FORMAT_VERSION,
            "kind": model.kind,
            "t_wo": model.t_wo,
            "n_pre": model.n_pre,
            "ident": _shallow_to_dict(model.ident),
            "pred": _shallow_to_dict(model.pred),
            "training_seed": training_seed,
        }
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    body["digest"] = _digest(body)
    return body


def save_checkpoint(model, path: str | Path, training_seed: int = 0) -> None:
    atomic_write(path, json.dumps(checkpoint_dict(model, training_seed)) + "\n")


def load_checkpoint(path: str | Path):
    try:
        body = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    if not isinstance(body, dict):
        raise CorruptFile(f"{path}: not a checkpoint")
    if body.get("format_version") != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: format_version {body.get('format_version')!r}, expected {FORMAT_VERSION}")
    digest = body.pop("digest", None)
    if digest != _digest(body):
        raise CorruptFile(f"{path}: digest mismatch")
    kind = body["kind"]
    if kind == "bilstm":
        return SequenceModel(
            params={k: np.array(v, dtype=np.float64) for k, v in body["weights"].items()},
            hidden=body["H"],
            d=body["d"],
            dropout_rate=body["dropout_rate"],
            scaler=Scaler.from_dict(body["scaler"]) if body["scaler"] else None,
            set_id=FeatureSet(body["set_id"]),
            t_wi=body["t_wi"],
            t_wo=body["t_wo"],
        )
    if kind in ("mlp", "extra_trees"):
        return ShallowPredictor(kind, _shallow_from_dict(kind, body["ident"]), _shallow_from_dict(kind, body["pred"]), body["t_wo"], body["n_pre"])
    raise CorruptFile(f"{path}: unknown model kind {kind!r}")
