"""Shallow comparison models: an MLP, extremely randomised trees, and the
re-sampling / pre-manoeuvre relabelling that makes them usable for prediction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, NoTransitions, ShapeMismatch, TooFewSamples
from .features import Scaler, fit_scaler
from .nn import AdamState, adam_step, softmax
from .track import N_CLASSES, ManoeuvreLabel

LEFT, STRAIGHT, RIGHT = int(ManoeuvreLabel.LEFT), int(ManoeuvreLabel.STRAIGHT), int(ManoeuvreLabel.RIGHT)
PRE_LEFT, PRE_RIGHT = 3, 4
N_EXTENDED = 5
EXTENDED_NAMES = ("left", "straight", "right", "pre_left", "pre_right")
# pre-manoeuvre classes are scored as the turn they lead into
EVENTUAL = np.array([LEFT, STRAIGHT, RIGHT, LEFT, RIGHT])


def relu(z):
    return np.maximum(z, 0.0)


# --- MLP --------------------------------------------------------------------


@dataclass(frozen=True)
class MlpConfig:
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0


@dataclass
class MlpModel:
    params: dict  # W0, b0, W1, b1, ...
    sizes: tuple[int, ...]
    scaler: Scaler | None = None

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1


def _mlp_forward(model: MlpModel, X: np.ndarray):
    acts = [X]
    a = X
    for i in range(model.n_layers):
        z = a @ model.params[f"W{i}"] + model.params[f"b{i}"]
        a = softmax(z) if i == model.n_layers - 1 else relu(z)
        acts.append(a)
    return acts


def _mlp_grads(model: MlpModel, X: np.ndarray, Y: np.ndarray) -> tuple[float, dict]:
    acts = _mlp_forward(model, X)
    probs = acts[-1]
    n = len(X)
    loss = float(-np.sum(Y * np.log(np.maximum(probs, 1e-12))) / n)
    grads = {}
    delta = (probs - Y) / n
    for i in range(model.n_layers - 1, -1, -1):
        grads[f"W{i}"] = acts[i].T @ delta
        grads[f"b{i}"] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.params[f"W{i}"].T) * (acts[i] > 0)
    return loss, grads


def train_mlp(X, y, config: MlpConfig = MlpConfig(), n_classes: int | None = None, scale: bool = True) -> MlpModel:
    """Softmax cross-entropy MLP with ReLU hidden layers, trained with Adam."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise EmptyDataset("no rows")
    if X.ndim != 2 or len(y) != len(X):
        raise ShapeMismatch(f"X {X.shape} vs y {y.shape}")
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    scaler = fit_scaler(X, "standardize") if scale else None
    Xs = scaler(X) if scaler else X
    Y = np.eye(n_classes)[y]

    rng = np.random.default_rng(config.seed)
    sizes = (X.shape[1], *config.hidden, n_classes)
    params = {}
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        params[f"W{i}"] = rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b))
        params[f"b{i}"] = np.zeros(b)
    model = MlpModel(params, sizes, scaler)
    state = AdamState.zeros_like(params, lr=config.lr)
    for _ in range(config.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), config.batch_size):
            idx = order[start : start + config.batch_size]
            _, grads = _mlp_grads(model, Xs[idx], Y[idx])
            model.params, state = adam_step(model.params, grads, state)
    return model


def predict_mlp(model: MlpModel, rows) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    single = rows.ndim == 1
    rows = rows[None] if single else rows
    if rows.shape[1] != model.sizes[0]:
        raise ShapeMismatch(f"row width {rows.shape[1]} != {model.sizes[0]}")
    if model.scaler is not None:
        rows = model.scaler(rows)
    probs = _mlp_forward(model, rows)[-1]
    return probs[0] if single else probs


# --- extremely randomised trees ---------------------------------------------


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # n_nodes x n_classes class fractions
    n_samples: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node


@dataclass
class ExtraTreesModel:
    trees: list
    n_classes: int
    n_estimators: int = 10
    min_samples_leaf: int = 2
    n_features: int = 0


def _gini(counts: np.ndarray) -> np.ndarray:
    tot = counts.sum(axis=-1)
    p = counts / np.maximum(tot, 1)[..., None]
    return 1.0 - np.sum(p * p, axis=-1)


def _build_tree(X, y, n_classes, min_leaf, rng) -> Tree:
    d = X.shape[1]
    k = max(1, math.ceil(math.sqrt(d)))
    feature, threshold, left, right, value, n_samples = [], [], [], [], [], []

    def new_node(idx):
        counts = np.bincount(y[idx], minlength=n_classes)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts / counts.sum())
        n_samples.append(len(idx))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)))]
    while stack:
        node, idx = stack.pop()
        n = len(idx)
        if n < 2 * min_leaf or value[node].max() == 1.0:
            continue
        Xn = X[idx]
        lo, hi = Xn.min(axis=0), Xn.max(axis=0)
        usable = np.flatnonzero(hi > lo)
        if usable.size == 0:
            continue
        feats = rng.choice(usable, size=min(k, usable.size), replace=False)
        thr = rng.uniform(lo[feats], hi[feats])
        goes_left = Xn[:, feats] <= thr  # n x k
        yn = np.eye(n_classes, dtype=np.int64)[y[idx]]
        lc = goes_left.T.astype(np.int64) @ yn  # k x C
        rc = yn.sum(axis=0) - lc
        nl, nr = lc.sum(axis=1), rc.sum(axis=1)
        ok = (nl >= min_leaf) & (nr >= min_leaf)
        if not ok.any():
            continue
        impurity = (nl * _gini(lc) + nr * _gini(rc)) / n
        impurity[~ok] = np.inf
        best = int(np.argmin(impurity))
        mask = goes_left[:, best]
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = int(feats[best]), float(thr[best])
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri))
        stack.append((left[node], li))

    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value),
        np.array(n_samples, dtype=np.int64),
    )


def train_extra_trees(X, y, seed: int = 0, n_estimators: int = 10, min_samples_leaf: int = 2, n_classes: int | None = None) -> ExtraTreesModel:
    """Each tree sees every row; at each node ceil(sqrt(d)) random features
    get one uniform random threshold each and the best Gini split wins."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(y) != len(X):
        raise ShapeMismatch(f"X {X.shape} vs y {y.shape}")
    if len(X) < 2 * min_samples_leaf:
        raise TooFewSamples(f"{len(X)} rows < {2 * min_samples_leaf}")
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    seeds = np.random.SeedSequence(seed).spawn(n_estimators)
    trees = [_build_tree(X, y, n_classes, min_samples_leaf, np.random.default_rng(s)) for s in seeds]
    return ExtraTreesModel(trees, n_classes, n_estimators, min_samples_leaf, X.shape[1])


def predict_trees(model: ExtraTreesModel, rows) -> np.ndarray:
    """Mean of the per-tree leaf class distributions."""
    rows = np.asarray(rows, dtype=np.float64)
    single = rows.ndim == 1
    rows = rows[None] if single else rows
    if rows.shape[1] != model.n_features:
        raise ShapeMismatch(f"row width {rows.shape[1]} != {model.n_features}")
    probs = np.mean([t.value[t.apply(rows)] for t in model.trees], axis=0)
    return probs[0] if single else probs


# --- re-sampling and relabelling --------------------------------------------


@dataclass
class ShallowPredictionDataset:
    X: np.ndarray  # rows with the current-manoeuvre one-hot appended
    y: np.ndarray  # extended labels, see EXTENDED_NAMES
    source_index: np.ndarray  # row of the input each output row was copied from
    class_counts: dict = field(default_factory=dict)


def relabel_series(labels, n_pre: int) -> np.ndarray:
    """Mark the ``n_pre`` straight samples before each straight->turn change."""
    labels = np.asarray(labels, dtype=np.int64)
    out = labels.copy()
    changes = np.flatnonzero((labels[:-1] == STRAIGHT) & (labels[1:] != STRAIGHT)) + 1
    for k in changes:
        pre = PRE_LEFT if labels[k] == LEFT else PRE_RIGHT
        j = k - 1
        while j >= max(0, k - n_pre) and labels[j] == STRAIGHT:
            out[j] = pre
            j -= 1
    return out


def relabel_windows(label_seqs: np.ndarray, n_pre: int) -> np.ndarray:
    """Same rule for windows: look up to ``n_pre`` steps ahead in each target row."""
    label_seqs = np.asarray(label_seqs, dtype=np.int64)
    current = label_seqs[:, 0].copy()
    horizon = label_seqs[:, 1 : n_pre + 1]
    out = current.copy()
    for n in np.flatnonzero(current == STRAIGHT):
        ahead = horizon[n][horizon[n] != STRAIGHT]
        if ahead.size:
            out[n] = PRE_LEFT if ahead[0] == LEFT else PRE_RIGHT
    return out


def balance_classes(extended: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row indices resampled so every present class has the median count."""
    classes = np.unique(extended)
    counts = np.array([np.sum(extended == c) for c in classes])
    target = int(np.median(counts))
    picks = []
    for c in classes:
        idx = np.flatnonzero(extended == c)
        if len(idx) >= target:
            picks.append(np.sort(rng.choice(idx, size=target, replace=False)))
        else:
            extra = rng.choice(idx, size=target - len(idx), replace=True)
            picks.append(np.concatenate([idx, np.sort(extra)]))
    return np.concatenate(picks)


def _assemble(rows, current, extended, rng) -> ShallowPredictionDataset:
    if not np.any(extended >= PRE_LEFT):
        raise NoTransitions("series contains no straight->turn transition")
    pick = balance_classes(extended, rng)
    X = np.hstack([rows[pick], np.eye(N_CLASSES)[current[pick]]])
    y = extended[pick]
    counts = {EXTENDED_NAMES[c]: int(np.sum(y == c)) for c in np.unique(y)}
    return ShallowPredictionDataset(X, y, pick, counts)


def resample_relabel(rows, labels, n_pre: int = 30, seed: int = 0) -> ShallowPredictionDataset:
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(rows) != len(labels):
        raise ShapeMismatch(f"{len(rows)} rows vs {len(labels)} labels")
    return _assemble(rows, labels, relabel_series(labels, n_pre), np.random.default_rng(seed))


def resample_relabel_windows(rows, label_seqs, n_pre: int = 30, seed: int = 0) -> ShallowPredictionDataset:
    label_seqs = np.asarray(label_seqs, dtype=np.int64)
    n_pre = min(n_pre, label_seqs.shape[1] - 1)
    extended = relabel_windows(label_seqs, n_pre)
    return _assemble(np.asarray(rows, dtype=np.float64), label_seqs[:, 0], extended, np.random.default_rng(seed))


# --- windowed wrapper used by the evaluation protocol -------------------------


@dataclass
class ShallowPredictor:
    """Identification model for t_wo = 0 plus a prediction model fed with the
    identified manoeuvre; its output is repeated over t_wo > 0."""

    kind: str  # "mlp" or "extra_trees"
    ident: object
    pred: object
    t_wo: int
    n_pre: int

    def _proba(self, model, rows):
        return predict_mlp(model, rows) if self.kind == "mlp" else predict_trees(model, rows)

    def predict_labels(self, X_windows: np.ndarray) -> np.ndarray:
        rows = X_windows[:, -1, :]
        current = self._proba(self.ident, rows).argmax(axis=1)
        ext = self._proba(self.pred, np.hstack([rows, np.eye(N_CLASSES)[current]])).argmax(axis=1)
        out = np.empty((len(rows), self.t_wo), dtype=np.int64)
        out[:, 0] = current
        out[:, 1:] = EVENTUAL[ext][:, None]
        return out


def fit_shallow(kind: str, X_windows: np.ndarray, label_seqs: np.ndarray, seed: int = 0, n_pre: int = 30, mlp: MlpConfig = MlpConfig()) -> ShallowPredictor:
    rows = X_windows[:, -1, :]
    current = label_seqs[:, 0]
    data = resample_relabel_windows(rows, label_seqs, n_pre, seed)
    if kind == "mlp":
        cfg = MlpConfig(mlp.hidden, mlp.epochs, mlp.batch_size, mlp.lr, seed)
        ident = train_mlp(rows, current, cfg, n_classes=N_CLASSES)
        pred = train_mlp(data.X, data.y, cfg, n_classes=N_EXTENDED)
    elif kind == "extra_trees":
        ident = train_extra_trees(rows, current, seed, n_classes=N_CLASSES)
        pred = train_extra_trees(data.X, data.y, seed + 1, n_classes=N_EXTENDED)
    else:
        raise ValueError(f"unknown shallow family {kind!r}")
    return ShallowPredictor(kind, ident, pred, label_seqs.shape[1], min(n_pre, label_seqs.shape[1] - 1))
