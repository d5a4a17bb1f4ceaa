"""Forecast error and goal-classification metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class UndefinedMetricError(ValueError):
    pass


def _pair(predictions, actuals) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    a = np.asarray(actuals, dtype=np.float64).ravel()
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {a.size} actuals")
    if p.size == 0:
        raise ValueError("metric of an empty set is undefined")
    return p, a


def mae(predictions, actuals) -> float:
    p, a = _pair(predictions, actuals)
    return float(np.mean(np.abs(a - p)))


def rmse(predictions, actuals) -> float:
    p, a = _pair(predictions, actuals)
    return float(np.sqrt(np.mean((a - p) ** 2)))


def nrmse(predictions, actuals) -> float:
    """RMSE divided by the mean of the actual values."""
    p, a = _pair(predictions, actuals)
    scale = float(np.mean(a))
    if scale <= 0:
        raise UndefinedMetricError(f"NRMSE needs a positive mean actual value, got {scale}")
    return rmse(p, a) / scale


def confusion(predicted, truth) -> tuple[int, int, int, int]:
    """``(tp, fp, fn, tn)`` for binary labels, positive = 1."""
    p = np.asarray(predicted).astype(bool).ravel()
    t = np.asarray(truth).astype(bool).ravel()
    if p.shape != t.shape:
        raise ValueError("label arrays differ in length")
    if p.size == 0:
        raise ValueError("metric of an empty set is undefined")
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    return tp, fp, fn, int(p.size - tp - fp - fn)


def accuracy_f1(predicted, truth) -> tuple[float, float]:
    """Accuracy and positive-class F1; F1 is 0 when precision + recall is 0."""
    for arr in (predicted, truth):
        vals = np.unique(np.asarray(arr))
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError(f"labels must be binary, got values {vals[:5]}")
    tp, fp, fn, tn = confusion(predicted, truth)
    m = tp + fp + fn + tn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return (tp + tn) / m, f1


def relative_margin(model_mae: float, baseline_mae: float) -> float:
    """Signed relative difference; negative means the model's error is lower."""
    if baseline_mae == 0:
        raise UndefinedMetricError("relative margin against a zero baseline")
    return (model_mae - baseline_mae) / baseline_mae


def format_margin(margin: float) -> str:
    pct = round(margin * 100)
    return f"{int(pct):+d}%" if pct != 0 else "0%"


@dataclass
class MetricsReport:
    experiment: str
    m: int
    mae: float
    rmse: float
    nrmse: float | None = None
    accuracy: float | None = None
    f1: float | None = None
    per_user: dict[str, tuple[int, float]] = field(default_factory=dict)
    margins: dict[str, float] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, experiment: str, predictions, actuals, user_ids=None,
                         config: dict | None = None) -> "MetricsReport":
        p, a = _pair(predictions, actuals)
        try:
            nr = nrmse(p, a)
        except UndefinedMetricError:
            nr = None
        per_user = {}
        if user_ids is not None:
            ids = np.asarray(user_ids, dtype=object)
            for u in sorted(set(ids.tolist())):
                sel = ids == u
                per_user[u] = (int(sel.sum()), mae(p[sel], a[sel]))
        return cls(experiment=experiment, m=int(p.size), mae=mae(p, a), rmse=rmse(p, a), nrmse=nr,
                   per_user=per_user, config=dict(config or {}))

    def pooled_from_users(self) -> float:
        total = sum(n for n, _ in self.per_user.values())
        return math.fsum(n * e for n, e in self.per_user.values()) / total
