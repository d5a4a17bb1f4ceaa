"""The common fitted-model container and its prediction path."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from stepcast.autodiff.layers import ParameterSet
from stepcast.autodiff.tensor import ShapeError
from stepcast.dataset import NormalizationStats, WindowedExample, WindowSet, normalize_set, stack_examples
from stepcast.forecasters import arima as arima_mod
from stepcast.forecasters import linreg, neural
from stepcast.forecasters.config import LINREG_ARCHITECTURES, LSTM_ARCHITECTURES, ModelConfig, TrainingLog
from stepcast.ingest import A_STEPS, N_ACTIVITY, N_ENGAGEMENT


class ModalityError(ValueError):
    pass


@dataclass
class TrainedForecaster:
    config: ModelConfig
    stats: NormalizationStats | None
    log: TrainingLog = field(default_factory=TrainingLog)
    params: ParameterSet | None = None
    coef: np.ndarray | None = None
    arima_fits: dict[str, arima_mod.ArimaFit] | None = None

    @property
    def kind(self) -> str:
        arch = self.config.architecture
        if arch in LSTM_ARCHITECTURES:
            return "lstm"
        if arch in LINREG_ARCHITECTURES:
            return "linreg"
        return "arima"

    def _check(self, ws: WindowSet) -> None:
        if ws.window_size != self.config.window:
            raise ShapeError(
                f"window size mismatch: model expects w={self.config.window}, got w={ws.window_size}"
            )
        for mod, width in (("u", N_ENGAGEMENT), ("v", N_ACTIVITY)):
            if mod in self.config.modalities:
                arr = getattr(ws, mod)
                if arr is None or arr.shape[-1] != width or np.isnan(arr).any():
                    name = "engagement" if mod == "u" else "activity"
                    raise ModalityError(f"{self.config.architecture} needs the {name} window")

    def predict_set(self, ws: WindowSet) -> np.ndarray:
        """Forecasts for every window: raw outcome units (clamped at 0) or goal probabilities."""
        self._check(ws)
        if len(ws) == 0:
            return np.zeros(0)
        if self.kind == "arima":
            return self._predict_arima(ws)
        norm = normalize_set(_with_dummy_targets(ws, self.stats), self.stats)
        if self.kind == "lstm":
            u, v = neural._inputs(self.config, norm)
            out = neural.raw_outputs(self.config, self.params, u, v)
            if self.config.head == "classification":
                return out
        else:
            out = self.coef[0] + linreg.design_matrix(self.config, norm) @ self.coef[1:]
        return np.maximum(self.stats.denormalize_target(self.config.outcome, out), 0.0)

    def predict(self, example) -> float | np.ndarray:
        if isinstance(example, WindowSet):
            return self.predict_set(example)
        if isinstance(example, WindowedExample):
            return float(self.predict_set(_single(example))[0])
        return self.predict_set(stack_examples(list(example)))

    def _predict_arima(self, ws: WindowSet) -> np.ndarray:
        out = np.empty(len(ws))
        for i in range(len(ws)):
            fit = self.arima_fits.get(str(ws.user_ids[i]))
            if fit is None:
                raise KeyError(f"no ARIMA fit for user {ws.user_ids[i]}")
            out[i] = arima_mod.forecast_one(fit, ws.v[i, :, A_STEPS])
        return out


def _single(example: WindowedExample) -> WindowSet:
    w = example.window_size if example.u_window is not None else example.v_window.shape[0]
    u = example.u_window if example.u_window is not None else np.full((w, N_ENGAGEMENT), np.nan)
    v = example.v_window if example.v_window is not None else np.full((w, N_ACTIVITY), np.nan)
    return WindowSet(
        user_ids=np.array([example.user_id], dtype=object),
        target_dates=np.array([np.datetime64(example.target_date, "D")]),
        u=np.asarray(u, dtype=np.float64)[None],
        v=np.asarray(v, dtype=np.float64)[None],
        targets={k: np.array([val]) for k, val in (example.target or {}).items()},
    )


def _with_dummy_targets(ws: WindowSet, stats: NormalizationStats) -> WindowSet:
    targets = {k: ws.targets.get(k, np.zeros(len(ws))) for k in stats.target_mean}
    return WindowSet(ws.user_ids, ws.target_dates, ws.u, ws.v, targets)


def train_arima(config: ModelConfig, series_by_user) -> TrainedForecaster:
    fits = {u: arima_mod.fit_arima(y, config.arima_order) for u, y in sorted(series_by_user.items())}
    return TrainedForecaster(config=config, stats=None, arima_fits=fits)


def train(config: ModelConfig, train_set: WindowSet, val_set: WindowSet | None = None) -> TrainedForecaster:
    """Dispatch to the trainer for ``config.architecture`` (LSTM or linear)."""
    if config.architecture in LSTM_ARCHITECTURES:
        return neural.train_lstm(config, train_set, val_set)
    if config.architecture in LINREG_ARCHITECTURES:
        return linreg.train_linreg(config, train_set)
    raise ValueError("ARIMA models are fit per user with train_arima")
