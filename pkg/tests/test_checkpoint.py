import json

import numpy as np
import pytest

from stepcast import checkpoint
from stepcast.checkpoint import CheckpointError
from stepcast.forecasters import ModelConfig, train, train_arima

from test_forecasters import FAST, random_set, simulate_arma


def _models():
    ws = random_set(80)
    out = []
    for arch in ("lstm_early", "lstm_late", "lstm_engagement", "lstm_activity",
                 "linreg_multimodal", "linreg_engagement", "linreg_activity"):
        out.append(train(ModelConfig(architecture=arch, window=3, **FAST), ws))
    out.append(train(ModelConfig(architecture="lstm_early", window=3, head="classification",
                                 threshold=5000, **FAST), ws))
    series = {f"u{i}": simulate_arma(40, phi=0.3, mu=5000, sigma=400, seed=i) for i in range(4)}
    out.append(train_arima(ModelConfig(architecture="arima", window=3), series))
    return out


MODELS = _models()


@pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.config.architecture}-{m.config.head}")
def test_round_trip_is_bit_identical(model, tmp_path):
    path = tmp_path / "m.json"
    digest = checkpoint.save(model, path)
    loaded = checkpoint.load(path)
    ws = random_set(25, seed=3)
    ws.v[:, :, 0] = np.abs(ws.v[:, :, 0]) + 3000
    np.testing.assert_array_equal(loaded.predict_set(ws), model.predict_set(ws))
    assert loaded.config == model.config
    assert checkpoint.save(loaded, tmp_path / "again.json") == digest
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_corruption_detected(tmp_path):
    path = tmp_path / "m.json"
    checkpoint.save(MODELS[0], path)
    payload = json.loads(path.read_text())
    payload["params"]["out.b"]["values"][0] += 1e-9
    path.write_text(json.dumps(payload))
    with pytest.raises(CheckpointError, match="digest"):
        checkpoint.load(path)


def test_truncated_and_foreign_files(tmp_path):
    data = checkpoint.dumps(MODELS[4])
    with pytest.raises(CheckpointError):
        checkpoint.loads(data[: len(data) // 2])
    with pytest.raises(CheckpointError, match="digest"):
        checkpoint.loads(b'{"kind": "lstm"}')


def test_schema_version_checked():
    payload = json.loads(checkpoint.dumps(MODELS[4]))
    payload["schema_version"] = 99
    payload["digest"] = checkpoint.digest_of(payload)
    with pytest.raises(CheckpointError, match="schema"):
        checkpoint.loads(json.dumps(payload))


def test_shape_mismatch_in_payload():
    payload = json.loads(checkpoint.dumps(MODELS[4]))
    payload["params"]["coef"]["shape"] = [3]
    payload["digest"] = checkpoint.digest_of(payload)
    with pytest.raises(CheckpointError, match="shape"):
        checkpoint.loads(json.dumps(payload))
