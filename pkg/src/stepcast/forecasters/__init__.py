"""Forecasting models behind one fitted-model contract."""

from stepcast.forecasters.arima import (
    ArimaError,
    ArimaFit,
    aic_order,
    evaluate_arima_protocol,
    fit_arima,
    forecast_one,
    rolling_forecasts,
)
from stepcast.forecasters.config import (
    ARCHITECTURES,
    LINREG_ARCHITECTURES,
    LSTM_ARCHITECTURES,
    ModelConfig,
    TrainingLog,
)
from stepcast.forecasters.linreg import fit_ols, train_linreg
from stepcast.forecasters.model import ModalityError, TrainedForecaster, train, train_arima
from stepcast.forecasters.neural import NumericalError, forward, fuse_early, init_params, train_lstm

__all__ = [
    "ARCHITECTURES",
    "ArimaError",
    "ArimaFit",
    "LINREG_ARCHITECTURES",
    "LSTM_ARCHITECTURES",
    "ModalityError",
    "ModelConfig",
    "NumericalError",
    "TrainedForecaster",
    "TrainingLog",
    "aic_order",
    "evaluate_arima_protocol",
    "fit_arima",
    "fit_ols",
    "forecast_one",
    "forward",
    "fuse_early",
    "init_params",
    "rolling_forecasts",
    "train",
    "train_arima",
    "train_linreg",
    "train_lstm",
]
