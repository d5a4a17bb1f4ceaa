import json

import pandas as pd
import pytest

from stepcast import checkpoint, ingest
from stepcast.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main

TINY = """
seed = 4
[data]
preset = "prediabetes"
n_users = 12
n_days = 60
invalid_user_fraction = 0.0
participation_fraction = 1.0
[experiment]
windows = [3, 7]
percentiles = [0, 50]
[model]
hidden_size = 4
late_hidden_size = 4
late_decision_size = 2
max_epochs = 2
"""


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.toml"
    cfg.write_text(TINY)
    out = root / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--quiet"]) == EXIT_OK
    return cfg, out


def test_synth_small(tmp_path, capsys):
    assert main(["synth", "--users", "5", "--days", "20", "--seed", "1", "--out", str(tmp_path)]) == EXIT_OK
    act = pd.read_csv(tmp_path / "activity.csv")
    assert 0 < len(act) <= 5 * 20 * 1440
    assert act.user_id.nunique() <= 5
    assert (tmp_path / "ground_truth.csv").exists() and (tmp_path / "engagement.csv").exists()


def test_synth_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--preset", "sleep", "--users", "4", "--days", "15", "--seed", "7",
                     "--out", str(tmp_path / name)]) == EXIT_OK
    for f in ("activity.csv", "engagement.csv", "ground_truth.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_usage_errors(tmp_path, capsys):
    assert main(["synth", "--users", "5"]) == EXIT_USAGE  # no seed
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--preset", "marathon", "--seed", "1"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == EXIT_USAGE
    assert main(["run", "--seed", "1", "--stages", "sweep,dance"]) == EXIT_USAGE
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == EXIT_USAGE
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = 1\n[model]\nhidden = 3\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_missing_csv_is_a_data_error(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'seed = 1\n[data]\nactivity = "{tmp_path}/nope.csv"\nengagement = "{tmp_path}/nope2.csv"\n')
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_DATA


def test_run_writes_all_reports(tiny_run):
    _, out = tiny_run
    for stem in ("sweep", "baselines", "margins", "classification", "cohorts", "per_user", "outcomes"):
        assert (out / f"{stem}_prediabetes.csv").exists()
        assert (out / f"{stem}_prediabetes.txt").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert all(v["status"] == "ok" for v in manifest["stages"].values())
    assert manifest["audit"]["test_users_in_fitting_sets"] == 0
    assert set(manifest["checkpoints"]) == {p.stem for p in (out / "checkpoints").glob("*.json")}


def test_report_rerender_matches(tiny_run, capsys):
    _, out = tiny_run
    before = {p.name: p.read_bytes() for p in out.glob("*.csv")}
    for p in out.glob("*.csv"):
        p.unlink()
    assert main(["report", "--out", str(out)]) == EXIT_OK
    assert "sweep" in capsys.readouterr().out
    assert {p.name: p.read_bytes() for p in out.glob("*.csv")} == before


def test_stage_filter(tiny_run, tmp_path):
    cfg, _ = tiny_run
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--stages", "baselines,margins",
                 "--quiet"]) == EXIT_OK
    assert sorted(p.name for p in out.glob("*.csv")) == ["baselines_prediabetes.csv", "margins_prediabetes.csv"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["stages"]["sweep"]["status"] == "skipped"
    assert manifest["selected_window"] == {"source": "default", "window": 7}


def _window_csv(path, rows):
    cols = list(ingest.ENGAGEMENT_FEATURES) + list(ingest.ACTIVITY_FEATURES)
    frame = pd.DataFrame([[1.0] * len(cols)] * rows, columns=cols)
    frame["total_steps"] = 5000.0
    frame.to_csv(path, index=False)
    return path


def _checkpoint(out, w):
    return next((out / "checkpoints").glob(f"lstm_early_w{w}_steps.json"))


def test_predict(tiny_run, tmp_path, capsys):
    _, out = tiny_run
    ck = _checkpoint(out, 7)
    assert main(["predict", str(ck), str(_window_csv(tmp_path / "w.csv", 7))]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["window"] == 7 and result["forecast"] >= 0


def test_predict_window_mismatch(tiny_run, tmp_path, capsys):
    _, out = tiny_run
    code = main(["predict", str(_checkpoint(out, 7)), str(_window_csv(tmp_path / "w.csv", 6))])
    assert code == EXIT_DATA
    err = capsys.readouterr().err
    assert "w=7" in err and "w=6" in err


def test_predict_missing_modality(tiny_run, tmp_path, capsys):
    _, out = tiny_run
    path = tmp_path / "v_only.csv"
    pd.DataFrame([[1.0] * 8] * 7, columns=ingest.ACTIVITY_FEATURES).to_csv(path, index=False)
    assert main(["predict", str(_checkpoint(out, 7)), str(path)]) == EXIT_DATA
    assert "engagement" in capsys.readouterr().err
    act_only = next((out / "checkpoints").glob("lstm_activity_w7_steps.json"))
    assert main(["predict", str(act_only), str(path)]) == EXIT_OK


def test_predict_corrupted_checkpoint(tiny_run, tmp_path, capsys):
    _, out = tiny_run
    payload = json.loads(_checkpoint(out, 7).read_text())
    payload["params"]["out.b"]["values"][0] += 0.5
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(payload))
    assert main(["predict", str(bad), str(_window_csv(tmp_path / "w.csv", 7))]) != EXIT_OK
    assert "digest" in capsys.readouterr().err
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(bad)
