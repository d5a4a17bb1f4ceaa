"""Per-user ARIMA(p, d, q) fit by conditional sum of squares, with rolling one-step forecasts."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import optimize

from stepcast import kernels

MIN_PROTOCOL_DAYS = 20
FIT_FRACTION = 0.7
_BOUND = 0.999


class ArimaError(ValueError):
    pass


@dataclass(frozen=True)
class ArimaFit:
    order: tuple[int, int, int]
    const: float
    ar: np.ndarray
    ma: np.ndarray
    center: float  # subtracted before fitting when d == 0
    scale: float
    sigma2: float
    requested_order: tuple[int, int, int]

    @property
    def fell_back(self) -> bool:
        return self.order != self.requested_order

    def to_dict(self) -> dict:
        return {
            "order": list(self.order), "requested_order": list(self.requested_order),
            "const": self.const, "ar": self.ar.tolist(), "ma": self.ma.tolist(),
            "center": self.center, "scale": self.scale, "sigma2": self.sigma2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArimaFit":
        return cls(order=tuple(d["order"]), requested_order=tuple(d["requested_order"]),
                   const=float(d["const"]), ar=np.asarray(d["ar"], dtype=np.float64),
                   ma=np.asarray(d["ma"], dtype=np.float64), center=float(d["center"]),
                   scale=float(d["scale"]), sigma2=float(d["sigma2"]))


def _difference(y: np.ndarray, d: int) -> np.ndarray:
    for _ in range(d):
        y = np.diff(y)
    return y


def _stationary(coefs: np.ndarray) -> bool:
    """True when all roots of 1 - c_1 x - ... - c_k x^k lie outside the unit circle."""
    if len(coefs) == 0 or not np.any(coefs):
        return True
    poly = np.concatenate([[1.0], -np.asarray(coefs)])[::-1]
    while len(poly) > 1 and poly[0] == 0:
        poly = poly[1:]
    roots = np.roots(poly)
    return bool(np.all(np.abs(roots) > 1.0 + 1e-9))


def _standardize(x: np.ndarray, d: int) -> tuple[np.ndarray, float, float]:
    center = float(x.mean()) if d == 0 else 0.0
    spread = float(np.sqrt(np.mean((x - center) ** 2)))
    scale = spread if spread > 1e-12 else 1.0
    return (x - center) / scale, center, scale


def _css_fit(z: np.ndarray, p: int, q: int, with_const: bool) -> tuple[float, np.ndarray, np.ndarray, float]:
    k = p + q + (1 if with_const else 0)
    if k == 0:
        return 0.0, np.zeros(0), np.zeros(0), float(np.sum(z * z))

    def unpack(theta):
        c = theta[0] if with_const else 0.0
        off = 1 if with_const else 0
        return c, theta[off : off + p], theta[off + p :]

    def objective(theta):
        c, ar, ma = unpack(theta)
        sse, grad = kernels.css_objective(z, c, np.ascontiguousarray(ar), np.ascontiguousarray(ma))
        n_eff = max(len(z) - p, 1)
        return sse / n_eff, (grad if with_const else grad[1:]) / n_eff

    bounds = ([(None, None)] if with_const else []) + [(-_BOUND, _BOUND)] * (p + q)
    res = optimize.minimize(objective, np.zeros(k), jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-10})
    c, ar, ma = unpack(res.x)
    sse, _ = kernels.css_objective(z, c, np.ascontiguousarray(ar), np.ascontiguousarray(ma))
    return float(c), np.array(ar, dtype=np.float64), np.array(ma, dtype=np.float64), float(sse)


def fit_arima(series, order=(1, 1, 1)) -> ArimaFit:
    """Fit ARIMA by minimizing the conditional sum of squared one-step errors.

    The differenced series is rescaled to unit spread before optimization.
    An intercept is estimated only when ``d == 0``. A non-stationary or
    non-invertible solution is replaced by the random-walk model (0, 1, 0).
    """
    y = np.asarray(series, dtype=np.float64)
    p, d, q = (int(k) for k in order)
    if min(p, d, q) < 0:
        raise ArimaError(f"invalid order {order}")
    if y.ndim != 1 or len(y) <= p + d + q + 10:
        raise ArimaError(f"series of length {len(y)} too short for order {(p, d, q)}; "
                         f"need more than {p + d + q + 10}")
    if not np.all(np.isfinite(y)):
        raise ArimaError("series contains non-finite values")
    x = _difference(y, d)
    z, center, scale = _standardize(x, d)
    const, ar, ma, sse = _css_fit(z, p, q, with_const=(d == 0))
    requested = (p, d, q)
    if not (_stationary(ar) and _stationary(-ma)):
        if requested == (0, 1, 0):
            raise ArimaError("random-walk fallback failed")
        fb = fit_arima(y, (0, 1, 0))
        return ArimaFit(order=fb.order, const=fb.const, ar=fb.ar, ma=fb.ma, center=fb.center,
                        scale=fb.scale, sigma2=fb.sigma2, requested_order=requested)
    sigma2 = sse * scale * scale / max(len(z) - p, 1)
    return ArimaFit(order=requested, const=const, ar=ar, ma=ma, center=center, scale=scale,
                    sigma2=sigma2, requested_order=requested)


def forecast_one(fit: ArimaFit, history) -> float:
    """One-step-ahead forecast given the observed history (fitted coefficients held fixed)."""
    y = np.asarray(history, dtype=np.float64)
    p, d, q = fit.order
    if len(y) <= d:
        raise ArimaError(f"history of length {len(y)} too short to difference {d} times")
    levels = []
    x = y
    for _ in range(d):
        levels.append(x[-1])
        x = np.diff(x)
    z = (x - fit.center) / fit.scale
    step = fit.const
    if p or q:
        e = kernels.css_residuals(z, fit.const, fit.ar, fit.ma)
        n = len(z)
        for i in range(p):
            if n - 1 - i >= 0:
                step += fit.ar[i] * z[n - 1 - i]
        for j in range(q):
            k = n - 1 - j
            if k >= p:
                step += fit.ma[j] * e[k]
    forecast = fit.center + fit.scale * step
    for level in reversed(levels):
        forecast += level
    return float(forecast)


def aic_order(series, p_max: int = 3, q_max: int = 3, d_values=(0, 1)) -> tuple[int, int, int]:
    """Order minimizing the CSS-based AIC ``n log(sse / n) + 2k``."""
    y = np.asarray(series, dtype=np.float64)
    best, best_aic = (0, 1, 0), math.inf
    for d in d_values:
        for p in range(p_max + 1):
            for q in range(q_max + 1):
                if len(y) <= p + d + q + 10:
                    continue
                fit = fit_arima(y, (p, d, q))
                if fit.fell_back:
                    continue
                n = len(y) - d - p
                k = p + q + (1 if d == 0 else 0)
                aic = n * math.log(max(fit.sigma2, 1e-300)) + 2 * k
                if aic < best_aic - 1e-12:
                    best, best_aic = (p, d, q), aic
    return best


def rolling_forecasts(series, order=(1, 1, 1), fit_fraction: float = FIT_FRACTION):
    """Fit on the leading ``fit_fraction`` of ``series``; forecast each later day one step ahead.

    Returns ``(fit, predictions, actuals)``.
    """
    y = np.asarray(series, dtype=np.float64)
    n_fit = int(math.floor(fit_fraction * len(y)))
    fit = fit_arima(y[:n_fit], order)
    preds = np.array([forecast_one(fit, y[:t]) for t in range(n_fit, len(y))])
    return fit, preds, y[n_fit:]


def evaluate_arima_protocol(series_by_user: Mapping[str, np.ndarray], order=(1, 1, 1),
                            min_days: int = MIN_PROTOCOL_DAYS) -> dict[str, np.ndarray]:
    """Per-user absolute one-step errors over the last 30% of each user's valid days.

    Users with fewer than ``min_days`` valid days are skipped with a warning.
    """
    errors = {}
    for user in sorted(series_by_user):
        y = np.asarray(series_by_user[user], dtype=np.float64)
        if len(y) < min_days:
            warnings.warn(f"user {user} has {len(y)} valid days (< {min_days}); excluded from ARIMA evaluation",
                          stacklevel=2)
            continue
        _, preds, actual = rolling_forecasts(y, order)
        errors[user] = np.abs(actual - preds)
    return errors
