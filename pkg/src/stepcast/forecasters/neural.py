"""LSTM forecasters: early fusion, late fusion and the two single-modality variants."""

from __future__ import annotations

import numpy as np

from stepcast.autodiff import tensor as T
from stepcast.autodiff.layers import LSTMCellParams, ParameterSet, dense_forward, glorot_uniform, lstm_forward
from stepcast.autodiff.losses import bce_loss, mse_loss
from stepcast.autodiff.optim import Adam, clip_grad_norm
from stepcast.autodiff.tensor import ShapeError, Tensor
from stepcast.dataset import NormalizationStats, WindowSet, fit_normalization, goal_labels, normalize_set
from stepcast.forecasters.config import LSTM_ARCHITECTURES, ModelConfig, TrainingLog
from stepcast.ingest import N_ACTIVITY, N_ENGAGEMENT

EVAL_CHUNK = 1024


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss."""


def fuse_early(u_window, v_window) -> np.ndarray:
    """Concatenate engagement and activity features day by day: (w, 57) + (w, 8) -> (w, 65)."""
    u = np.asarray(u_window, dtype=np.float64)
    v = np.asarray(v_window, dtype=np.float64)
    if u.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"window lengths differ: engagement {u.shape}, activity {v.shape}")
    return np.concatenate([u, v], axis=-1)


def _dense_params(params: ParameterSet, rng, prefix: str, n_in: int, n_out: int) -> None:
    params.add(f"{prefix}.W", glorot_uniform(rng, (n_out, n_in)))
    params.add(f"{prefix}.b", np.zeros(n_out))


def init_params(config: ModelConfig, rng: np.random.Generator) -> ParameterSet:
    """Fresh Glorot-initialized parameters for an LSTM architecture."""
    arch = config.architecture
    if arch not in LSTM_ARCHITECTURES:
        raise ValueError(f"{arch} is not an LSTM architecture")
    params = ParameterSet()
    if arch == "lstm_late":
        h, k = config.late_hidden_size, config.late_decision_size
        LSTMCellParams.init(rng, N_ENGAGEMENT, h, params, prefix="lstm_u")
        _dense_params(params, rng, "decide_u", h, k)
        LSTMCellParams.init(rng, N_ACTIVITY, h, params, prefix="lstm_v")
        _dense_params(params, rng, "decide_v", h, k)
        _dense_params(params, rng, "out", 2 * k, 1)
        return params
    n_in = {"lstm_early": N_ENGAGEMENT + N_ACTIVITY, "lstm_engagement": N_ENGAGEMENT,
            "lstm_activity": N_ACTIVITY}[arch]
    LSTMCellParams.init(rng, n_in, config.hidden_size, params, prefix="lstm")
    _dense_params(params, rng, "out", config.hidden_size, 1)
    return params


def forward(config: ModelConfig, params: ParameterSet, u, v) -> Tensor:
    """Network output for a batch: (B,) raw score, passed through a sigmoid for classification."""
    arch = config.architecture
    if arch == "lstm_late":
        _, hu, _ = lstm_forward(u, LSTMCellParams.from_params(params, "lstm_u"))
        _, hv, _ = lstm_forward(v, LSTMCellParams.from_params(params, "lstm_v"))
        du = dense_forward(hu, params["decide_u.W"], params["decide_u.b"], "tanh")
        dv = dense_forward(hv, params["decide_v.W"], params["decide_v.b"], "tanh")
        joined = T.concat([du, dv], axis=-1)
        out = dense_forward(joined, params["out.W"], params["out.b"])
    else:
        if arch == "lstm_early":
            seq = fuse_early(u, v)
        elif arch == "lstm_engagement":
            seq = u
        else:
            seq = v
        _, h, _ = lstm_forward(seq, LSTMCellParams.from_params(params, "lstm"))
        out = dense_forward(h, params["out.W"], params["out.b"])
    out = T.reshape(out, (out.shape[0],))
    if config.head == "classification":
        out = T.sigmoid(out)
    return out


def _inputs(config: ModelConfig, ws: WindowSet):
    u = ws.u if "u" in config.modalities else None
    v = ws.v if "v" in config.modalities else None
    return u, v


def _targets(config: ModelConfig, raw: WindowSet, norm: WindowSet) -> np.ndarray:
    if config.head == "classification":
        return goal_labels(raw.targets["steps"], config.threshold)
    return norm.targets[config.outcome]


def loss_fn(config: ModelConfig, pred: Tensor, target: np.ndarray) -> Tensor:
    return bce_loss(pred, target) if config.head == "classification" else mse_loss(pred, target)


def evaluate_loss(config: ModelConfig, params: ParameterSet, ws: WindowSet, target: np.ndarray) -> float:
    u, v = _inputs(config, ws)
    total = 0.0
    for lo in range(0, len(ws), EVAL_CHUNK):
        sl = slice(lo, lo + EVAL_CHUNK)
        pred = forward(config, params, None if u is None else u[sl], None if v is None else v[sl])
        total += float(loss_fn(config, pred, target[sl]).value) * len(pred.value)
    return total / len(ws)


def raw_outputs(config: ModelConfig, params: ParameterSet, u, v) -> np.ndarray:
    n = len(u) if u is not None else len(v)
    out = np.empty(n)
    for lo in range(0, n, EVAL_CHUNK):
        sl = slice(lo, lo + EVAL_CHUNK)
        out[sl] = forward(config, params, None if u is None else u[sl], None if v is None else v[sl]).value
    return out


def train_lstm(config: ModelConfig, train: WindowSet, val: WindowSet | None = None,
               stats: NormalizationStats | None = None):
    """Fit one LSTM forecaster with Adam, global-norm clipping and early stopping.

    ``train`` and ``val`` hold raw (unnormalized) windows; normalization is fit
    on ``train`` unless ``stats`` is given. The parameters of the epoch with
    the lowest validation loss (training loss when no validation set) are kept.
    """
    from stepcast.forecasters.model import TrainedForecaster

    if config.architecture not in LSTM_ARCHITECTURES:
        raise ValueError(f"{config.architecture} is not an LSTM architecture")
    if len(train) == 0:
        raise ValueError("empty training set")
    if train.window_size != config.window:
        raise ShapeError(f"training windows have w={train.window_size}, config expects {config.window}")
    stats = stats or fit_normalization(train)
    tr = normalize_set(train, stats)
    y_tr = _targets(config, train, tr)
    have_val = val is not None and len(val) > 0
    if have_val:
        va = normalize_set(val, stats)
        y_va = _targets(config, val, va)
    u_tr, v_tr = _inputs(config, tr)

    init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    params = init_params(config, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    opt = Adam(params, lr=config.learning_rate)
    log = TrainingLog()
    best_state, best_loss, waited = params.state(), np.inf, 0
    n = len(tr)
    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(n)
        running = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            pred = forward(config, params, None if u_tr is None else u_tr[idx],
                           None if v_tr is None else v_tr[idx])
            loss = loss_fn(config, pred, y_tr[idx])
            value = float(loss.value)
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch + 1}, batch starting {lo} "
                    f"({config.architecture}, w={config.window})"
                )
            params.zero_grad()
            loss.backward()
            clip_grad_norm(params, config.clip_norm)
            opt.step()
            running += value * len(idx)
        train_loss = running / n
        monitored = evaluate_loss(config, params, va, y_va) if have_val else train_loss
        log.train_loss.append(train_loss)
        if have_val:
            log.val_loss.append(monitored)
        if monitored < best_loss:
            best_loss, best_state, waited = monitored, params.state(), 0
            log.best_epoch = epoch
        else:
            waited += 1
            if waited >= config.patience:
                log.stopped_early = True
                break
    params.load_state(best_state)
    return TrainedForecaster(config=config, stats=stats, log=log, params=params)
