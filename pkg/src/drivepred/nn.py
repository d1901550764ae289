"""Bidirectional LSTM sequence classifier written directly in numpy.

Parameters live in a flat ``dict[str, ndarray]`` so the optimiser, the
gradient checker and the checkpoint writer can all walk them by name:

    fwd.W  (4H, d)   fwd.U  (4H, H)   fwd.b  (4H,)
    bwd.W  (4H, d)   bwd.U  (4H, H)   bwd.b  (4H,)
    dense.W (2H, C)  dense.b (C,)

Gate blocks inside the 4H axis are ordered input, forget, candidate, output.
Everything runs in float64.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, ShapeMismatch
from .features import FeatureSet, Scaler, WindowedDataset, fit_scaler

N_OUT = 3
PROB_FLOOR = 1e-12


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def param_count(H: int, d: int, classes: int = N_OUT) -> int:
    return 2 * (4 * (H * (H + d) + H)) + (2 * H * classes + classes)


# --- single LSTM layer ------------------------------------------------------


def lstm_forward(W, U, b, x, h0=None, c0=None):
    """Run the gated recurrence over ``x`` (B x T x d, or T x d).

    Returns (h_seq, cache); h_seq has shape B x T x H (T x H for 2-D input).
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    B, T, d = x.shape
    H = U.shape[1]
    if W.shape != (4 * H, d) or U.shape != (4 * H, H) or b.shape != (4 * H,):
        raise ShapeMismatch(f"W{W.shape} U{U.shape} b{b.shape} for input width {d}")
    h = np.zeros((B, H)) if h0 is None else np.broadcast_to(h0, (B, H)).astype(np.float64)
    c = np.zeros((B, H)) if c0 is None else np.broadcast_to(c0, (B, H)).astype(np.float64)

    xw = x @ W.T + b
    gates = np.empty((T, B, 4 * H))  # activated i, f, g, o
    cs = np.empty((T + 1, B, H))
    hs = np.empty((T + 1, B, H))
    tcs = np.empty((T, B, H))
    cs[0], hs[0] = c, h
    UT = U.T
    for t in range(T):
        z = xw[:, t] + hs[t] @ UT
        a = gates[t]
        a[:, : 2 * H] = sigmoid(z[:, : 2 * H])
        a[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        a[:, 3 * H :] = sigmoid(z[:, 3 * H :])
        cs[t + 1] = a[:, H : 2 * H] * cs[t] + a[:, :H] * a[:, 2 * H : 3 * H]
        tcs[t] = np.tanh(cs[t + 1])
        hs[t + 1] = a[:, 3 * H :] * tcs[t]
    h_seq = hs[1:].transpose(1, 0, 2)
    cache = (x, U, gates, cs, hs, tcs)
    return (h_seq[0] if squeeze else h_seq), cache


def lstm_backward(cache, dh_seq):
    """Gradients of W, U, b given dL/dh for every step (B x T x H)."""
    x, U, gates, cs, hs, tcs = cache
    B, T, d = x.shape
    H = U.shape[1]
    dZ = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    dh_all = dh_seq.transpose(1, 0, 2)
    for t in range(T - 1, -1, -1):
        a = gates[t]
        i, f, g, o = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        dh = dh_all[t] + dh_next
        tc = tcs[t]
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dZ[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * cs[t] * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ U
    flat = dZ.reshape(T * B, 4 * H)
    dW = flat.T @ x.transpose(1, 0, 2).reshape(T * B, d)
    dU = flat.T @ hs[:-1].reshape(T * B, H)
    db = flat.sum(axis=0)
    return dW, dU, db


# --- model ------------------------------------------------------------------


@dataclass
class SequenceModel:
    params: dict
    hidden: int
    d: int
    dropout_rate: float = 0.2
    scaler: Scaler | None = None
    set_id: FeatureSet = FeatureSet.SET4
    t_wi: int = 30
    t_wo: int = 30

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "SequenceModel":
        return copy.deepcopy(self)

    def predict_proba(self, X_raw: np.ndarray, batch: int = 512) -> np.ndarray:
        """Unscaled N x T x d windows -> N x T x 3 probabilities."""
        X = self.scaler(X_raw) if self.scaler is not None else X_raw
        out = [model_forward(self, X[i : i + batch], training=False)[0] for i in range(0, len(X), batch)]
        return np.concatenate(out) if out else np.zeros((0, X.shape[1], N_OUT))


def _glorot(rng, shape):
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_model(hidden: int, d: int, seed: int = 0, dropout_rate: float = 0.2, **meta) -> SequenceModel:
    rng = np.random.default_rng(seed)
    H = hidden
    params = {}
    for side in ("fwd", "bwd"):
        # glorot over the (d, 4H) kernel and the (H, 4H) recurrent kernel
        params[f"{side}.W"] = _glorot(rng, (d, 4 * H)).T.copy()
        params[f"{side}.U"] = _glorot(rng, (H, 4 * H)).T.copy()
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        params[f"{side}.b"] = b
    params["dense.W"] = _glorot(rng, (2 * H, N_OUT))
    params["dense.b"] = np.zeros(N_OUT)
    return SequenceModel(params, H, d, dropout_rate, **meta)


def bilstm_forward(model: SequenceModel, x: np.ndarray):
    """Concatenated forward/backward hidden states, forward half first."""
    p = model.params
    if x.shape[-1] != model.d:
        raise ShapeMismatch(f"input width {x.shape[-1]} != model width {model.d}")
    squeeze = x.ndim == 2
    xb = x[None] if squeeze else x
    hf, cf = lstm_forward(p["fwd.W"], p["fwd.U"], p["fwd.b"], xb)
    hb_rev, cb = lstm_forward(p["bwd.W"], p["bwd.U"], p["bwd.b"], xb[:, ::-1])
    out = np.concatenate([hf, hb_rev[:, ::-1]], axis=2)
    return (out[0] if squeeze else out), (cf, cb)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    if rate >= 1.0:
        return np.zeros(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def model_forward(model: SequenceModel, x: np.ndarray, training: bool = False, rng=None, mask=None):
    """Per-step class probabilities.

    Dropout hits the concatenated recurrent output only while ``training``;
    pass ``mask`` to fix it (gradient checks), otherwise it is drawn from
    ``rng``.
    """
    squeeze = x.ndim == 2
    xb = x[None] if squeeze else x
    concat, caches = bilstm_forward(model, xb)
    if training:
        if mask is None:
            if rng is None:
                raise ValueError("training forward needs rng or mask")
            mask = dropout_mask(rng, concat.shape, model.dropout_rate)
        dropped = concat * mask
    else:
        mask = None
        dropped = concat
    logits = dropped @ model.params["dense.W"] + model.params["dense.b"]
    probs = softmax(logits)
    cache = (caches, dropped, mask)
    return (probs[0] if squeeze else probs), cache


def ce_loss(prob_seq: np.ndarray, y_seq: np.ndarray) -> float:
    """Mean over all steps (and samples) of -sum_k y log p."""
    if prob_seq.shape != y_seq.shape:
        raise ShapeMismatch(f"{prob_seq.shape} vs {y_seq.shape}")
    steps = int(np.prod(prob_seq.shape[:-1]))
    return float(-np.sum(y_seq * np.log(np.maximum(prob_seq, PROB_FLOOR))) / steps)


def backward(model: SequenceModel, x: np.ndarray, y: np.ndarray, mask=None):
    """Loss and exact BPTT gradients of the batch-mean cross-entropy.

    ``mask`` is a fixed dropout mask (B x T x 2H); ``None`` means no dropout.
    """
    if x.ndim == 2:
        x, y = x[None], y[None]
        mask = None if mask is None else mask[None]
    if x.shape[:2] != y.shape[:2]:
        raise ShapeMismatch(f"x {x.shape} vs y {y.shape}")
    probs, (caches, dropped, mask) = model_forward(model, x, training=mask is not None, mask=mask)
    loss = ce_loss(probs, y)
    B, T, _ = probs.shape
    H = model.hidden
    p = model.params

    dlogits = (probs - y) / (B * T)
    grads = {
        "dense.W": dropped.reshape(-1, 2 * H).T @ dlogits.reshape(-1, N_OUT),
        "dense.b": dlogits.sum(axis=(0, 1)),
    }
    dconcat = dlogits @ p["dense.W"].T
    if mask is not None:
        dconcat = dconcat * mask
    cf, cb = caches
    grads["fwd.W"], grads["fwd.U"], grads["fwd.b"] = lstm_backward(cf, dconcat[:, :, :H])
    grads["bwd.W"], grads["bwd.U"], grads["bwd.b"] = lstm_backward(cb, dconcat[:, ::-1, H:])
    return loss, grads


# --- optimiser --------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict, **hyper) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()}, **hyper)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    if params.keys() != grads.keys():
        raise ShapeMismatch("parameter and gradient names differ")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{k}: grad {g.shape} vs param {p.shape}")
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_p[k] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)


# --- training ---------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    dropout_rate: float = 0.2
    lr: float = 1e-3
    shuffle: bool = True
    keep_best: bool = True  # restore the epoch with the lowest validation loss

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class TrainResult:
    model: SequenceModel
    history: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss


def evaluate_loss(model: SequenceModel, X: np.ndarray, Y: np.ndarray, batch: int = 512) -> float:
    total = 0.0
    for i in range(0, len(X), batch):
        probs, _ = model_forward(model, X[i : i + batch], training=False)
        total += ce_loss(probs, Y[i : i + batch]) * len(probs)
    return total / len(X)


def train(model: SequenceModel, dataset: WindowedDataset, config: TrainConfig, validation: WindowedDataset | None = None) -> TrainResult:
    """Mini-batch Adam on an already-scaled dataset.

    Shuffling and dropout draw from one generator seeded by ``config.seed``.
    """
    if len(dataset) == 0:
        raise EmptyDataset("no training windows")
    if dataset.d != model.d or dataset.t_wo != dataset.X.shape[1]:
        raise ShapeMismatch("dataset width or window lengths do not fit the model")
    rng = np.random.default_rng(config.seed)
    model = model.copy()
    model.dropout_rate = config.dropout_rate
    state = AdamState.zeros_like(model.params, lr=config.lr)
    X, Y = dataset.X, dataset.Y
    n = len(X)
    history = []
    best = (np.inf, None)
    for epoch in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        seen, running = 0, 0.0
        for start in range(0, n, config.batch_size):
            idx = np.sort(order[start : start + config.batch_size])
            xb, yb = X[idx], Y[idx]
            mask = dropout_mask(rng, (len(idx), xb.shape[1], 2 * model.hidden), model.dropout_rate)
            loss, grads = backward(model, xb, yb, mask)
            model.params, state = adam_step(model.params, grads, state)
            running += loss * len(idx)
            seen += len(idx)
        row = {"epoch": epoch, "train_loss": running / seen}
        if validation is not None and len(validation):
            row["val_loss"] = evaluate_loss(model, validation.X, validation.Y)
            if config.keep_best and row["val_loss"] < best[0]:
                best = (row["val_loss"], {k: v.copy() for k, v in model.params.items()})
        history.append(row)
    if best[1] is not None:
        model.params = best[1]
    return TrainResult(model, history)


def scale_dataset(ds: WindowedDataset, scaler: Scaler) -> WindowedDataset:
    return WindowedDataset(scaler(ds.X), ds.Y, ds.subject_id, ds.t_wi, ds.t_wo, ds.set_id, ds.stride)


def fit_bilstm(
    train_ds: WindowedDataset,
    hidden: int,
    config: TrainConfig,
    validation: WindowedDataset | None = None,
) -> TrainResult:
    """Fit a (-1, 1) scaler on the training windows, then train a fresh model."""
    if len(train_ds) == 0:
        raise EmptyDataset("no training windows")
    if train_ds.t_wi != train_ds.t_wo:
        raise ShapeMismatch("the many-to-many model needs t_wi == t_wo")
    scaler = fit_scaler(train_ds.X, "minmax_symmetric")
    model = init_model(
        hidden, train_ds.d, seed=config.seed, dropout_rate=config.dropout_rate,
        scaler=scaler, set_id=train_ds.set_id, t_wi=train_ds.t_wi, t_wo=train_ds.t_wo,
    )
    val = scale_dataset(validation, scaler) if validation is not None else None
    return train(model, scale_dataset(train_ds, scaler), config, val)


# --- gradient check -----------------------------------------------------------


def grad_check(model: SequenceModel, x: np.ndarray, y: np.ndarray, eps: float = 1e-5, mask=None) -> float:
    """Max relative error of ``backward`` against central differences.

    Relative error per entry is |a - n| / max(|a| + |n|, 1e-8).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    _, grads = backward(model, x, y, mask)
    worst = 0.0
    for name, p in model.params.items():
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = p[ix]
            p[ix] = orig + eps
            lp, _ = backward(model, x, y, mask)
            p[ix] = orig - eps
            lm, _ = backward(model, x, y, mask)
            p[ix] = orig
            num = (lp - lm) / (2 * eps)
            ana = grads[name][ix]
            rel = abs(ana - num) / max(abs(ana) + abs(num), 1e-8)
            worst = max(worst, rel)
    return worst
