"""JSON model checkpoints with a SHA-256 content digest."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from stepcast.autodiff.layers import ParameterSet
from stepcast.dataset import NormalizationStats
from stepcast.forecasters.arima import ArimaFit
from stepcast.forecasters.config import ModelConfig, TrainingLog
from stepcast.forecasters.model import TrainedForecaster

SCHEMA_VERSION = 1


class CheckpointError(ValueError):
    pass


def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def _tensor(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "values": arr.ravel(order="C").tolist()}


def _array(d: dict) -> np.ndarray:
    values = np.asarray(d["values"], dtype=np.float64)
    shape = tuple(d["shape"])
    if values.size != int(np.prod(shape, dtype=np.int64)):
        raise CheckpointError(f"tensor has {values.size} values but shape {shape}")
    return values.reshape(shape)


def to_payload(model: TrainedForecaster) -> dict:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": model.kind,
        "config": model.config.to_dict(),
        "normalization": model.stats.to_dict() if model.stats is not None else None,
        "training_log": model.log.to_dict(),
        "params": {},
    }
    if model.params is not None:
        payload["params"] = {name: _tensor(p.value) for name, p in model.params.items()}
    if model.coef is not None:
        payload["params"] = {"coef": _tensor(model.coef)}
    if model.arima_fits is not None:
        payload["arima_fits"] = {u: f.to_dict() for u, f in sorted(model.arima_fits.items())}
    return payload


def digest_of(payload: dict) -> str:
    body = {k: v for k, v in payload.items() if k != "digest"}
    return hashlib.sha256(_canonical(body)).hexdigest()


def dumps(model: TrainedForecaster) -> bytes:
    payload = to_payload(model)
    payload["digest"] = digest_of(payload)
    return _canonical(payload) + b"\n"


def save(model: TrainedForecaster, path) -> str:
    """Write ``model`` to ``path``; returns the content digest."""
    data = dumps(model)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)
    return json.loads(data)["digest"]


def loads(data: bytes | str) -> TrainedForecaster:
    try:
        payload = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from None
    if not isinstance(payload, dict) or "digest" not in payload:
        raise CheckpointError("checkpoint has no digest")
    expected = payload["digest"]
    try:
        actual = digest_of(payload)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint content cannot be canonicalized: {exc}") from None
    if actual != expected:
        raise CheckpointError(f"digest mismatch: stored {str(expected)[:12]}..., computed {actual[:12]}...")
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(f"unsupported schema version {payload.get('schema_version')}")
    try:
        config = ModelConfig.from_dict(payload["config"])
        stats = (NormalizationStats.from_dict(payload["normalization"])
                 if payload["normalization"] is not None else None)
        log = TrainingLog.from_dict(payload["training_log"])
        model = TrainedForecaster(config=config, stats=stats, log=log)
        kind = payload["kind"]
        if kind == "lstm":
            model.params = ParameterSet({name: _array(t) for name, t in sorted(payload["params"].items())})
        elif kind == "linreg":
            model.coef = _array(payload["params"]["coef"])
        elif kind == "arima":
            model.arima_fits = {u: ArimaFit.from_dict(f) for u, f in payload["arima_fits"].items()}
        else:
            raise CheckpointError(f"unknown model kind {kind!r}")
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc!r}") from None
    if model.kind != payload["kind"]:
        raise CheckpointError("model kind does not match its architecture")
    return model


def load(path) -> TrainedForecaster:
    return loads(Path(path).read_bytes())
