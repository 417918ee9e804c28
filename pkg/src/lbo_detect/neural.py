"""Two-layer LSTM / RNN next-step predictors trained from scratch.

Both model kinds share the same layout: two stacked recurrent layers read the
window in time order, the last hidden state of the second layer goes through
a ReLU dense layer of width ``p`` and then a linear unit producing the scalar
prediction.  Everything is batched numpy; backpropagation through time is
written out by hand.

Parameter names (keys of :attr:`SequenceModel.params`):

``l1.W`` ``(m + 1, G*m)``, ``l1.b`` ``(G*m,)``
    first recurrent layer; rows are ``[previous hidden; input]``.
``l2.W`` ``(n + m, G*n)``, ``l2.b`` ``(G*n,)``
    second recurrent layer.
``head.Wd`` ``(n, p)``, ``head.bd`` ``(p,)``, ``head.Wy`` ``(p,)``, ``head.by`` ``()``

``G`` is 1 for the RNN and 4 for the LSTM (gate blocks ordered i, f, o, g).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigInvalid, LengthMismatch, ShapeMismatch, TrainingDiverged
from .series import QuasiStaticRecord, ScalingParams, WindowSet, apply_scale, make_windows, rmse

log = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]
PARAM_KEYS = ("l1.W", "l1.b", "l2.W", "l2.b", "head.Wd", "head.bd", "head.Wy", "head.by")


class ModelKind(str, enum.Enum):
    LSTM = "lstm"
    RNN = "rnn"

    @property
    def gates(self) -> int:
        return 4 if self is ModelKind.LSTM else 1


@dataclass
class SequenceModel:
    kind: ModelKind
    t_x: int
    m: int
    n: int
    p: int
    params: Params

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        g = self.kind.gates
        shapes = {
            "l1.W": (self.m + 1, g * self.m),
            "l1.b": (g * self.m,),
            "l2.W": (self.n + self.m, g * self.n),
            "l2.b": (g * self.n,),
            "head.Wd": (self.n, self.p),
            "head.bd": (self.p,),
            "head.Wy": (self.p,),
            "head.by": (),
        }
        for key, shape in shapes.items():
            if key not in self.params:
                raise ShapeMismatch(f"missing parameter {key}")
            arr = np.asarray(self.params[key], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeMismatch(f"{key}: expected {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{key} has non-finite entries")
            self.params[key] = arr

    def copy(self) -> "SequenceModel":
        return replace(self, params={k: v.copy() for k, v in self.params.items()})

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "t_x": self.t_x,
            "m": self.m,
            "n": self.n,
            "p": self.p,
            "params": {k: np.asarray(self.params[k]).tolist() for k in PARAM_KEYS},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceModel":
        try:
            params = {k: np.array(d["params"][k], dtype=np.float64) for k in PARAM_KEYS}
            return cls(d["kind"], int(d["t_x"]), int(d["m"]), int(d["n"]), int(d["p"]), params)
        except KeyError as exc:
            raise ConfigInvalid(f"model checkpoint lacks {exc}") from None


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 50
    batch_size: int = 512
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: int = 32
    n: int = 32
    p: int = 16
    clip_norm: Optional[float] = None
    keep_best_val: bool = False

    def __post_init__(self):
        problems = []
        if not self.learning_rate > 0:
            problems.append("learning_rate must be > 0")
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            problems.append("beta1, beta2 must lie in (0, 1)")
        if not self.eps > 0:
            problems.append("eps must be > 0")
        if min(self.m, self.n, self.p) < 1:
            problems.append("hidden sizes must be >= 1")
        if self.clip_norm is not None and not self.clip_norm > 0:
            problems.append("clip_norm must be positive when set")
        if problems:
            raise ConfigInvalid("; ".join(problems))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


def sigmoid(z, out=None):
    """Logistic function via tanh; never overflows."""
    out = np.multiply(z, 0.5, out=out)
    np.tanh(out, out=out)
    out += 1.0
    out *= 0.5
    return out


# ---------------------------------------------------------------------------
# single cells (reference forms, used by tests and docs)


def rnn_cell_forward(W: np.ndarray, b: np.ndarray, h_prev, x_in) -> np.ndarray:
    """``tanh(W^T [h_prev; x_in] + b)``."""
    h_prev = np.atleast_1d(np.asarray(h_prev, dtype=np.float64))
    x_in = np.atleast_1d(np.asarray(x_in, dtype=np.float64))
    concat = np.concatenate([h_prev, x_in])
    if W.shape != (concat.size, b.size) or h_prev.size != b.size:
        raise ShapeMismatch(f"W {W.shape} incompatible with [h_prev; x] of size {concat.size}")
    return np.tanh(concat @ W + b)


def lstm_cell_forward(W: np.ndarray, b: np.ndarray, h_prev, c_prev, x_in) -> Tuple[np.ndarray, np.ndarray]:
    """One LSTM step; ``W`` columns hold the i, f, o, g blocks in that order."""
    h_prev = np.atleast_1d(np.asarray(h_prev, dtype=np.float64))
    c_prev = np.atleast_1d(np.asarray(c_prev, dtype=np.float64))
    x_in = np.atleast_1d(np.asarray(x_in, dtype=np.float64))
    h = h_prev.size
    concat = np.concatenate([h_prev, x_in])
    if W.shape != (concat.size, 4 * h) or b.shape != (4 * h,) or c_prev.size != h:
        raise ShapeMismatch(f"W {W.shape} incompatible with hidden size {h}")
    z = concat @ W + b
    i, f, o = sigmoid(z[:h]), sigmoid(z[h : 2 * h]), sigmoid(z[2 * h : 3 * h])
    g = np.tanh(z[3 * h :])
    c_new = f * c_prev + i * g
    return o * np.tanh(c_new), c_new


# ---------------------------------------------------------------------------
# batched layers


# Sequences are stored as ``(T, features, B)``: time-major and feature-major,
# so each gate block of a step is a contiguous row block.


def _rnn_layer_forward(W, b, X):
    T, d_in, B = X.shape
    h = b.size
    H = np.empty((T, h, B))
    concat = np.empty((T, h + d_in, B))
    Wt = np.ascontiguousarray(W.T)
    bias = b[:, None]
    for t in range(T):
        concat[t, :h] = H[t - 1] if t else 0.0
        concat[t, h:] = X[t]
        np.matmul(Wt, concat[t], out=H[t])
        H[t] += bias
        np.tanh(H[t], out=H[t])
    return H, {"concat": concat, "H": H}


def _rnn_layer_backward(W, cache, dH):
    concat, H = cache["concat"], cache["H"]
    T, h, B = H.shape
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[1])
    dX = np.empty((T, concat.shape[1] - h, B))
    dh_next = np.zeros((h, B))
    for t in reversed(range(T)):
        dz = dH[t] + dh_next
        dz *= 1.0 - H[t] * H[t]
        dW += concat[t] @ dz.T
        db += dz.sum(axis=1)
        dconcat = W @ dz
        dh_next = dconcat[:h]
        dX[t] = dconcat[h:]
    return dX, dW, db


def _lstm_layer_forward(W, b, X):
    T, d_in, B = X.shape
    h = b.size // 4
    H = np.empty((T, h, B))
    C = np.empty((T, h, B))
    gates = np.empty((T, 4 * h, B))
    concat = np.empty((T, h + d_in, B))
    Wt = np.ascontiguousarray(W.T)
    bias = b[:, None]
    for t in range(T):
        concat[t, :h] = H[t - 1] if t else 0.0
        concat[t, h:] = X[t]
        z = gates[t]
        np.matmul(Wt, concat[t], out=z)
        z += bias
        # sigmoid(x) = (1 + tanh(x/2)) / 2, so one tanh pass covers all gates
        z[: 3 * h] *= 0.5
        np.tanh(z, out=z)
        z[: 3 * h] += 1.0
        z[: 3 * h] *= 0.5
        c = C[t]
        if t:
            np.multiply(z[h : 2 * h], C[t - 1], out=c)
            c += z[:h] * z[3 * h :]
        else:
            np.multiply(z[:h], z[3 * h :], out=c)
        np.tanh(c, out=H[t])
        H[t] *= z[2 * h : 3 * h]
    return H, {"concat": concat, "gates": gates, "C": C, "H": H}


def _lstm_layer_backward(W, cache, dH):
    concat, gates, C, H = cache["concat"], cache["gates"], cache["C"], cache["H"]
    T, h, B = H.shape
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[1])
    dX = np.empty((T, concat.shape[1] - h, B))
    dh_next = np.zeros((h, B))
    dc_next = np.zeros((h, B))
    dz = np.empty((4 * h, B))
    tc = np.empty((h, B))
    for t in reversed(range(T)):
        i, f, o, g = (gates[t, k * h : (k + 1) * h] for k in range(4))
        np.tanh(C[t], out=tc)
        dh = dH[t] + dh_next
        dc = dh * o
        dc *= 1.0 - tc * tc
        dc += dc_next
        np.multiply(dc, g, out=dz[:h])
        dz[:h] *= i * (1.0 - i)
        if t:
            np.multiply(dc, C[t - 1], out=dz[h : 2 * h])
            dz[h : 2 * h] *= f * (1.0 - f)
        else:
            dz[h : 2 * h] = 0.0
        np.multiply(dh, tc, out=dz[2 * h : 3 * h])
        dz[2 * h : 3 * h] *= o * (1.0 - o)
        np.multiply(dc, i, out=dz[3 * h :])
        dz[3 * h :] *= 1.0 - g * g
        dc_next = dc * f
        dW += concat[t] @ dz.T
        db += dz.sum(axis=1)
        dconcat = W @ dz
        dh_next = dconcat[:h]
        dX[t] = dconcat[h:]
    return dX, dW, db


_LAYERS = {
    ModelKind.RNN: (_rnn_layer_forward, _rnn_layer_backward),
    ModelKind.LSTM: (_lstm_layer_forward, _lstm_layer_backward),
}


# ---------------------------------------------------------------------------
# whole model


def forward(model: SequenceModel, windows) -> Tuple[np.ndarray, dict]:
    """Predict the next sample for each window.

    ``windows`` is ``(B, t_x)`` or a single ``(t_x,)`` window.  Hidden and cell
    states start at zero for every window.  Returns predictions of shape
    ``(B,)`` and the tape needed by :func:`backward`.
    """
    X = np.asarray(windows, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.t_x:
        raise ShapeMismatch(f"windows must have length {model.t_x}, got shape {X.shape}")
    P = model.params
    layer_fwd, _ = _LAYERS[model.kind]
    A, cache1 = layer_fwd(P["l1.W"], P["l1.b"], X.T[:, None, :])
    Hs, cache2 = layer_fwd(P["l2.W"], P["l2.b"], A)
    h_last = Hs[-1].T
    zd = h_last @ P["head.Wd"] + P["head.bd"]
    d = np.maximum(zd, 0.0)
    y_hat = d @ P["head.Wy"] + P["head.by"]
    tape = {"cache1": cache1, "cache2": cache2, "h_last": h_last, "zd": zd, "d": d, "y_hat": y_hat}
    return y_hat, tape


def predict(model: SequenceModel, windows, chunk: int = 4096) -> np.ndarray:
    """Batched inference without keeping the tape around."""
    X = np.asarray(windows, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], chunk):
        out[start : start + chunk] = forward(model, X[start : start + chunk])[0]
    return out


def mse_loss(y_hat, y) -> float:
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if y_hat.size != y.size:
        raise LengthMismatch(f"{y_hat.size} predictions vs {y.size} targets")
    if y.size == 0:
        raise LengthMismatch("empty batch")
    return float(np.mean((y_hat - y) ** 2))


def backward(model: SequenceModel, tape: dict, targets) -> Params:
    """Exact gradient of :func:`mse_loss` w.r.t. every parameter."""
    y = np.asarray(targets, dtype=np.float64).ravel()
    y_hat = tape["y_hat"]
    if y.shape != y_hat.shape:
        raise LengthMismatch(f"{y_hat.size} predictions vs {y.size} targets")
    P = model.params
    B = y.size
    dy = 2.0 * (y_hat - y) / B
    grads: Params = {
        "head.by": np.asarray(dy.sum()),
        "head.Wy": tape["d"].T @ dy,
    }
    dzd = np.outer(dy, P["head.Wy"]) * (tape["zd"] > 0)
    grads["head.Wd"] = tape["h_last"].T @ dzd
    grads["head.bd"] = dzd.sum(axis=0)
    dh_last = dzd @ P["head.Wd"].T

    _, layer_bwd = _LAYERS[model.kind]
    dHs = np.zeros_like(tape["cache2"]["H"])
    dHs[-1] = dh_last.T
    dA, grads["l2.W"], grads["l2.b"] = layer_bwd(P["l2.W"], tape["cache2"], dHs)
    _, grads["l1.W"], grads["l1.b"] = layer_bwd(P["l1.W"], tape["cache1"], dA)
    return grads


def init_model(kind, t_x: int, m: int, n: int, p: int, seed: int) -> SequenceModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    kind = ModelKind(kind)
    g = kind.gates
    rng = np.random.default_rng(seed)

    def uniform(rows, cols):
        bound = 1.0 / math.sqrt(rows)
        return rng.uniform(-bound, bound, size=(rows, cols) if cols else rows)

    params = {
        "l1.W": uniform(m + 1, g * m),
        "l1.b": np.zeros(g * m),
        "l2.W": uniform(n + m, g * n),
        "l2.b": np.zeros(g * n),
        "head.Wd": uniform(n, p),
        "head.bd": np.zeros(p),
        "head.Wy": uniform(p, 0),
        "head.by": np.asarray(0.0),
    }
    return SequenceModel(kind, t_x, m, n, p, params)


@dataclass
class AdamState:
    m: Params
    v: Params
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Params) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.items()}, {k: np.zeros_like(a) for k, a in params.items()})


def adam_step(params: Params, grads: Params, state: AdamState, config: TrainConfig) -> None:
    """One in-place bias-corrected Adam update; increments ``state.step``."""
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    for key, g in grads.items():
        state.m[key] = b1 * state.m[key] + (1.0 - b1) * g
        state.v[key] = b2 * state.v[key] + (1.0 - b2) * g * g
        m_hat = state.m[key] / (1.0 - b1**t)
        v_hat = state.v[key] / (1.0 - b2**t)
        params[key] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)


def _clip(grads: Params, max_norm: float) -> Params:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def window_loss(model: SequenceModel, windows: WindowSet) -> float:
    return mse_loss(predict(model, windows.inputs), windows.targets)


def train(kind, train_set: WindowSet, val_set: WindowSet, config: TrainConfig = TrainConfig(),
          progress=None) -> Tuple[SequenceModel, List[EpochRecord]]:
    """Minibatch Adam on MSE.

    The per-epoch training loss in the history is the full-pass loss of the
    training windows after the epoch's last update, so it can be reproduced
    exactly from the returned model.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigInvalid("training and validation sets must be non-empty")
    if train_set.t_x != val_set.t_x:
        raise ConfigInvalid("train and validation windows differ in length")
    model = init_model(kind, train_set.t_x, config.m, config.n, config.p, config.seed)
    state = AdamState.zeros_like(model.params)
    history: List[EpochRecord] = []
    best: Optional[Tuple[float, SequenceModel]] = None
    n_train = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(n_train)
        for start in range(0, n_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            y_hat, tape = forward(model, train_set.inputs[idx])
            grads = backward(model, tape, train_set.targets[idx])
            if config.clip_norm is not None:
                grads = _clip(grads, config.clip_norm)
            adam_step(model.params, grads, state, config)
        train_loss = window_loss(model, train_set)
        val_loss = window_loss(model, val_set)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        history.append(EpochRecord(epoch, train_loss, val_loss))
        log.debug("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
        if progress is not None:
            progress(history[-1])
        if config.keep_best_val and (best is None or val_loss < best[0]):
            best = (val_loss, model.copy())
    if config.keep_best_val and best is not None:
        model = best[1]
    return model, history


def predict_rmse(model: SequenceModel, record, scaling: ScalingParams, t_x: Optional[int] = None) -> float:
    """RMSE of next-step predictions over every window of a record."""
    t_x = model.t_x if t_x is None else t_x
    if t_x != model.t_x:
        raise ShapeMismatch(f"model expects windows of {model.t_x}, got t_x={t_x}")
    series = record.series if isinstance(record, QuasiStaticRecord) else record
    windows = make_windows(apply_scale(series, scaling), t_x, scaling)
    return rmse(predict(model, windows.inputs), windows.targets)
