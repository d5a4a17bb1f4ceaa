"""Ridge-damped least squares on flattened windows."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from stepcast.dataset import NormalizationStats, WindowSet, fit_normalization, normalize_set
from stepcast.forecasters.config import LINREG_ARCHITECTURES, ModelConfig, TrainingLog


def fit_ols(X, y, ridge: float = 1e-6) -> np.ndarray:
    """Coefficients ``[intercept, w_1, ..., w_k]`` from the damped normal equations.

    The intercept is left undamped.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ValueError(f"need a nonempty design matrix matching y, got X{X.shape}, y{y.shape}")
    A = np.hstack([np.ones((len(X), 1)), X])
    G = A.T @ A
    G[np.diag_indices_from(G)] += ridge
    G[0, 0] -= ridge
    if ridge <= 0 or not np.all(np.isfinite(G)):
        return linalg.lstsq(A, y)[0]
    try:
        return linalg.solve(G, A.T @ y, assume_a="pos")
    except linalg.LinAlgError:
        return linalg.lstsq(A, y)[0]


def design_matrix(config: ModelConfig, ws: WindowSet) -> np.ndarray:
    parts = []
    if "u" in config.modalities:
        parts.append(ws.u.reshape(len(ws), -1))
    if "v" in config.modalities:
        parts.append(ws.v.reshape(len(ws), -1))
    return np.hstack(parts)


def train_linreg(config: ModelConfig, train: WindowSet, stats: NormalizationStats | None = None):
    """Fit on z-scored flattened windows against the z-scored outcome."""
    from stepcast.forecasters.model import TrainedForecaster

    if config.architecture not in LINREG_ARCHITECTURES:
        raise ValueError(f"{config.architecture} is not a linear-regression architecture")
    if len(train) == 0:
        raise ValueError("empty training set")
    stats = stats or fit_normalization(train)
    tr = normalize_set(train, stats)
    coef = fit_ols(design_matrix(config, tr), tr.targets[config.outcome], config.ridge)
    return TrainedForecaster(config=config, stats=stats, log=TrainingLog(), coef=coef)
