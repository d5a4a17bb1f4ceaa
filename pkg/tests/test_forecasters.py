import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stepcast.autodiff.tensor import ShapeError
from stepcast.dataset import WindowSet, fit_normalization, normalize_set
from stepcast.forecasters import (
    ArimaError,
    ModalityError,
    ModelConfig,
    evaluate_arima_protocol,
    fit_arima,
    fit_ols,
    forecast_one,
    forward,
    fuse_early,
    rolling_forecasts,
    train,
    train_arima,
)
from stepcast.forecasters.arima import aic_order

FAST = dict(hidden_size=8, late_hidden_size=6, late_decision_size=4, max_epochs=5, batch_size=16)


def random_set(n=60, w=3, seed=0, target=None):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(n, w, 57))
    v = rng.normal(size=(n, w, 8)) * 100 + 1000
    y = target(u, v) if target is not None else rng.normal(size=n) * 500 + 5000
    return WindowSet(user_ids=np.array([f"u{i % 4}" for i in range(n)], dtype=object),
                     target_dates=np.array(["2021-01-01"] * n, dtype="datetime64[D]"),
                     u=u, v=v, targets={"steps": y, "sed_minutes": np.abs(y) / 10,
                                        "wear_time": np.full(n, 700.0), "lpa_minutes": np.abs(y) / 50})


def _sig(a):
    return 1 / (1 + np.exp(-a))


def numpy_lstm(x, W_ih, W_hh, b):
    """Single-sequence LSTM written directly from the gate equations."""
    H = W_hh.shape[1]
    h, c = np.zeros(H), np.zeros(H)
    for row in x:
        a = W_ih @ row + W_hh @ h + b
        i, f, o, g = _sig(a[:H]), _sig(a[H:2 * H]), _sig(a[2 * H:3 * H]), np.tanh(a[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
    return h


def test_fuse_early():
    u, v = np.ones((7, 57)), np.full((7, 8), 2.0)
    f = fuse_early(u, v)
    assert f.shape == (7, 65)
    np.testing.assert_array_equal(f[:, :57], u)
    np.testing.assert_array_equal(f[:, 57:], v)
    with pytest.raises(ShapeError):
        fuse_early(np.ones((6, 57)), v)


@pytest.mark.parametrize("arch", ["lstm_early", "lstm_engagement", "lstm_activity"])
def test_single_lstm_composition(arch):
    cfg = ModelConfig(architecture=arch, window=3, **FAST)
    model = train(cfg, random_set())
    ws = normalize_set(random_set(n=4, seed=9), model.stats)
    got = forward(cfg, model.params, ws.u, ws.v).value
    P = {k: t.value for k, t in model.params.items()}
    for i in range(4):
        seq = {"lstm_early": np.concatenate([ws.u[i], ws.v[i]], 1),
               "lstm_engagement": ws.u[i], "lstm_activity": ws.v[i]}[arch]
        h = numpy_lstm(seq, P["lstm.W_ih"], P["lstm.W_hh"], P["lstm.b"])
        assert abs(got[i] - (P["out.W"] @ h + P["out.b"])[0]) < 1e-10


def test_late_fusion_composition():
    cfg = ModelConfig(architecture="lstm_late", window=3, **FAST)
    model = train(cfg, random_set())
    ws = normalize_set(random_set(n=3, seed=4), model.stats)
    got = forward(cfg, model.params, ws.u, ws.v).value
    P = {k: t.value for k, t in model.params.items()}
    for i in range(3):
        hu = numpy_lstm(ws.u[i], P["lstm_u.W_ih"], P["lstm_u.W_hh"], P["lstm_u.b"])
        hv = numpy_lstm(ws.v[i], P["lstm_v.W_ih"], P["lstm_v.W_hh"], P["lstm_v.b"])
        du = np.tanh(P["decide_u.W"] @ hu + P["decide_u.b"])
        dv = np.tanh(P["decide_v.W"] @ hv + P["decide_v.b"])
        expected = (P["out.W"] @ np.concatenate([du, dv]) + P["out.b"])[0]
        assert abs(got[i] - expected) < 1e-10


def test_early_fusion_feature_permutation_equivariance():
    cfg = ModelConfig(architecture="lstm_early", window=3, **FAST)
    model = train(cfg, random_set())
    ws = normalize_set(random_set(n=5, seed=2), model.stats)
    base = forward(cfg, model.params, ws.u, ws.v).value
    perm_u = np.random.default_rng(0).permutation(57)
    perm_v = np.random.default_rng(1).permutation(8)
    W = model.params["lstm.W_ih"].value.copy()
    model.params["lstm.W_ih"].value = np.concatenate([W[:, :57][:, perm_u], W[:, 57:][:, perm_v]], 1)
    permuted = forward(cfg, model.params, ws.u[:, :, perm_u], ws.v[:, :, perm_v]).value
    np.testing.assert_allclose(permuted, base, rtol=0, atol=1e-12)


@pytest.mark.parametrize("arch,blind", [("lstm_activity", "u"), ("lstm_engagement", "v"),
                                        ("linreg_activity", "u"), ("linreg_engagement", "v")])
def test_single_modality_models_ignore_the_other_stream(arch, blind):
    model = train(ModelConfig(architecture=arch, window=3, **FAST), random_set())
    ws = random_set(n=10, seed=5)
    base = model.predict_set(ws)
    noisy = random_set(n=10, seed=5)
    arr = getattr(noisy, blind)
    arr[:] = np.random.default_rng(8).normal(size=arr.shape) * 1e3
    np.testing.assert_array_equal(model.predict_set(noisy), base)
    arr[:] = np.nan
    np.testing.assert_array_equal(model.predict_set(noisy), base)


def test_missing_modality_rejected():
    model = train(ModelConfig(architecture="lstm_early", window=3, **FAST), random_set())
    ws = random_set(n=2)
    ws.u[:] = np.nan
    with pytest.raises(ModalityError, match="engagement"):
        model.predict_set(ws)


def test_window_mismatch_names_both_sizes():
    model = train(ModelConfig(architecture="lstm_activity", window=7, **FAST), random_set(w=7))
    with pytest.raises(ShapeError, match=r"w=7.*w=6"):
        model.predict_set(random_set(n=1, w=6))


def test_training_is_deterministic():
    cfg = ModelConfig(architecture="lstm_late", window=3, seed=11, **FAST)
    a, b = train(cfg, random_set(), random_set(n=20, seed=1)), train(cfg, random_set(), random_set(n=20, seed=1))
    for name, t in a.params.items():
        np.testing.assert_array_equal(t.value, b.params[name].value)
    assert a.log == b.log
    c = train(cfg.replace(seed=12), random_set(), random_set(n=20, seed=1))
    assert not np.array_equal(c.params["out.W"].value, a.params["out.W"].value)


def test_constant_target_predicted_exactly():
    ws = random_set(target=lambda u, v: np.full(len(u), 4321.0))
    for arch in ("lstm_early", "linreg_multimodal"):
        model = train(ModelConfig(architecture=arch, window=3, **FAST), ws)
        pred = model.predict_set(random_set(n=8, seed=3))
        np.testing.assert_allclose(pred, 4321.0, rtol=1e-9)


def test_linear_teacher_recovered():
    rng = np.random.default_rng(0)
    wu, wv = rng.normal(size=(3, 57)), rng.normal(size=(3, 8))
    teacher = lambda u, v: 5000 + (u * wu).sum((1, 2)) * 10 + ((v - 1000) * wv).sum((1, 2))  # noqa: E731
    model = train(ModelConfig(architecture="linreg_multimodal", window=3, ridge=0.0), random_set(400, target=teacher))
    test = random_set(50, seed=7, target=teacher)
    np.testing.assert_allclose(model.predict_set(test), test.targets["steps"], rtol=1e-8)


def test_ols_matches_pseudoinverse():
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(80, 6)), rng.normal(size=80)
    A = np.hstack([np.ones((80, 1)), X])
    np.testing.assert_allclose(fit_ols(X, y, ridge=0.0), np.linalg.pinv(A) @ y, rtol=0, atol=1e-10)
    np.testing.assert_allclose(fit_ols(X, y, ridge=1e-10), np.linalg.pinv(A) @ y, rtol=0, atol=1e-8)
    with pytest.raises(ValueError):
        fit_ols(np.zeros((0, 2)), np.zeros(0))


def test_regression_predictions_clamped_nonnegative():
    ws = random_set(target=lambda u, v: -1000.0 + 0 * u[:, 0, 0])
    model = train(ModelConfig(architecture="linreg_activity", window=3), ws)
    assert np.all(model.predict_set(random_set(n=5, seed=1)) == 0.0)


def test_classification_head_outputs_probabilities():
    cfg = ModelConfig(architecture="lstm_activity", window=3, head="classification", threshold=5000, **FAST)
    model = train(cfg, random_set())
    p = model.predict_set(random_set(n=20, seed=6))
    assert np.all((p > 0) & (p < 1))


def test_training_loss_falls_on_learnable_task():
    teacher = lambda u, v: v[:, -1, 0] * 5  # noqa: E731
    cfg = ModelConfig(architecture="lstm_activity", window=3, hidden_size=8, max_epochs=30, learning_rate=1e-2)
    model = train(cfg, random_set(200, target=teacher))
    assert model.log.train_loss[-1] < 0.3 * model.log.train_loss[0]


# ARIMA ------------------------------------------------------------------

def simulate_arma(n, phi=0.0, theta=0.0, mu=0.0, seed=0, sigma=1.0):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=n + 100) * sigma
    x = np.zeros(n + 100)
    for t in range(1, n + 100):
        x[t] = phi * x[t - 1] + e[t] + theta * e[t - 1]
    return x[100:] + mu


def test_ar1_coefficient_recovered():
    fit = fit_arima(simulate_arma(3000, phi=0.6, mu=50), (1, 0, 0))
    assert abs(fit.ar[0] - 0.6) < 0.05
    assert not fit.fell_back


def test_ma1_coefficient_recovered():
    fit = fit_arima(simulate_arma(3000, theta=0.5), (0, 0, 1))
    assert abs(fit.ma[0] - 0.5) < 0.05


def test_ar1_forecast_oracle():
    y = simulate_arma(200, phi=0.5, mu=10, seed=2)
    fit = fit_arima(y, (1, 0, 0))
    z_last = (y[-1] - fit.center) / fit.scale
    expected = fit.center + fit.scale * (fit.const + fit.ar[0] * z_last)
    assert abs(forecast_one(fit, y) - expected) < 1e-9


def test_arma11_forecast_oracle():
    y = simulate_arma(300, phi=0.4, theta=0.3, seed=3)
    fit = fit_arima(y, (1, 0, 1))
    z = (y - fit.center) / fit.scale
    e = 0.0
    for t in range(1, len(z)):
        e_prev = e if t >= 2 else 0.0
        e = z[t] - fit.const - fit.ar[0] * z[t - 1] - fit.ma[0] * e_prev
    expected = fit.center + fit.scale * (fit.const + fit.ar[0] * z[-1] + fit.ma[0] * e)
    assert abs(forecast_one(fit, y) - expected) < 1e-9


def test_random_walk_forecast_is_last_value():
    y = np.cumsum(np.random.default_rng(0).normal(size=50))
    fit = fit_arima(y, (0, 1, 0))
    assert forecast_one(fit, y) == y[-1]


@settings(max_examples=15, deadline=None)
@given(st.floats(-1e4, 1e4), st.floats(0.1, 1e3), st.integers(0, 1000))
def test_arima_affine_equivariance(shift, scale, seed):
    y = simulate_arma(120, phi=0.5, theta=0.2, seed=seed)
    a = fit_arima(y, (1, 1, 1))
    b = fit_arima(y * scale + shift, (1, 1, 1))
    fa, fb = forecast_one(a, y), forecast_one(b, y * scale + shift)
    assert abs(fb - (fa * scale + shift)) < 1e-5 * max(1.0, abs(shift), scale)


def test_short_series_rejected():
    with pytest.raises(ArimaError):
        fit_arima(np.arange(12.0), (1, 1, 1))
    with pytest.raises(ArimaError):
        fit_arima(np.array([1.0] * 20 + [np.nan]), (0, 1, 0))


def test_constant_series_is_handled():
    fit = fit_arima(np.full(40, 7000.0), (1, 1, 1))
    assert forecast_one(fit, np.full(40, 7000.0)) == pytest.approx(7000.0)


def test_rolling_protocol_lengths_and_skips():
    y = simulate_arma(40, phi=0.3, mu=5000, sigma=500)
    fit, preds, actual = rolling_forecasts(y)
    assert len(preds) == len(actual) == 40 - 28
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        errors = evaluate_arima_protocol({"long": y, "short": y[:19]})
    assert list(errors) == ["long"]
    assert any("short" in str(w.message) for w in caught)


def test_aic_prefers_true_order_family():
    y = simulate_arma(800, phi=0.7, seed=5)
    p, d, q = aic_order(y, p_max=2, q_max=1, d_values=(0,))
    assert p >= 1 and d == 0


def test_trained_arima_predicts_from_window():
    y = simulate_arma(60, phi=0.4, mu=5000, sigma=300, seed=1)
    model = train_arima(ModelConfig(architecture="arima", window=7), {"u0": y})
    ws = random_set(n=1, w=7)
    ws.user_ids[:] = "u0"
    ws.v[0, :, 0] = y[-7:]
    assert model.predict_set(ws)[0] == pytest.approx(forecast_one(model.arima_fits["u0"], y[-7:]))
