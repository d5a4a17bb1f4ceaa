import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stepcast import dataset as D
from stepcast.dataset import ConfigurationError, SplitError

from conftest import make_day, make_user


def test_window_count_and_alignment():
    days = make_user("u", 10)
    ex = D.build_windows(days, 7)
    assert len(ex) == 3
    for k, e in enumerate(ex):
        t = 7 + k  # zero-based target position
        assert e.target_date == days[t].date
        assert e.target["steps"] == days[t].steps
        np.testing.assert_array_equal(e.v_window, np.stack([d.activity for d in days[t - 7:t]]))
        np.testing.assert_array_equal(e.u_window, np.stack([d.engagement for d in days[t - 7:t]]))


@pytest.mark.parametrize("n,w", [(3, 3), (2, 7), (0, 3), (4, 3)])
def test_window_count_small(n, w):
    assert len(D.build_windows(make_user("u", n), w)) == max(0, n - w)


def test_targets_for_all_outcomes():
    ex = D.build_windows(make_user("u", 5), 3)[0]
    days = make_user("u", 5)
    assert ex.target == {"steps": days[3].activity[0], "sed_minutes": days[3].activity[1],
                         "wear_time": days[3].activity[4], "lpa_minutes": days[3].activity[2]}


def test_contiguous_windows_skip_gaps():
    days = make_user("u", 12, gaps=(5,))  # 11 valid days, a hole at calendar day 5
    assert len(D.build_windows(days, 3)) == 8
    contiguous = D.build_windows(days, 3, require_contiguous_days=True)
    # runs of 5 and 6 consecutive days give 2 + 3 windows
    assert len(contiguous) == 5
    for e in contiguous:
        assert (e.target_date - dt.date(2021, 3, 1)).days not in (6, 7, 8)


def test_invalid_window_and_outcome():
    with pytest.raises(ConfigurationError):
        D.build_windows(make_user("u", 5), 0)
    with pytest.raises(ConfigurationError):
        D.build_windows(make_user("u", 5), 2, outcomes=["calories"])


def test_unsorted_days_rejected():
    days = make_user("u", 5)
    with pytest.raises(ConfigurationError):
        D.build_windows(days[::-1], 2)


def test_windows_never_cross_users():
    users = {"a": make_user("a", 9), "b": make_user("b", 9, seed=1)}
    ws = D.build_window_set(users, 3)
    for i in range(len(ws)):
        user = ws.user_ids[i]
        own = {np.datetime64(d.date, "D") for d in users[user]}
        assert ws.target_dates[i] in own
    assert len(ws) == 12


@pytest.mark.parametrize("n,expected", [(55, (38, 6, 11)), (44, (31, 4, 9)), (10, (7, 1, 2)), (3, (1, 1, 1))])
def test_split_sizes(n, expected):
    sp = D.split_participants([f"u{i:02d}" for i in range(n)], seed=0)
    assert (len(sp.train_users), len(sp.val_users), len(sp.test_users)) == expected


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 120), st.integers(0, 2**31))
def test_split_is_a_partition(n, seed):
    users = [f"p{i}" for i in range(n)]
    sp = D.split_participants(users, seed=seed)
    parts = [sp.train_users, sp.val_users, sp.test_users]
    assert set().union(*parts) == set(users)
    assert sum(len(p) for p in parts) == n
    assert sp == D.split_participants(list(reversed(users)), seed=seed)


def test_split_errors():
    with pytest.raises(SplitError):
        D.split_participants(["a", "b"])
    with pytest.raises(SplitError):
        D.split_participants(["a", "b", "c"], test_fraction=1.2)


def test_normalization_oracle():
    rng = np.random.default_rng(0)
    users = {f"u{i}": make_user(f"u{i}", 15, seed=i) for i in range(4)}
    ws = D.build_window_set(users, 3)
    ws.u[:, :, 20] += rng.normal(size=ws.u.shape[:2])
    stats = D.fit_normalization(ws)
    rows = ws.u.reshape(-1, 57)
    assert stats.u_std[45] == D.STD_FLOOR and stats.u_constant[45]
    for j in (0, 20, 21):
        col = [float(r[j]) for r in rows]
        m = math.fsum(col) / len(col)
        s = math.sqrt(math.fsum((c - m) ** 2 for c in col) / len(col))
        assert abs(stats.u_mean[j] - m) <= 1e-12 * max(1, abs(m))
        assert abs(stats.u_std[j] - s) <= 1e-12 * max(1, s)
    y = [float(t) for t in ws.targets["steps"]]
    m = math.fsum(y) / len(y)
    assert abs(stats.target_mean["steps"] - m) <= 1e-12 * m


def test_constant_feature_normalizes_to_zero():
    users = {"a": make_user("a", 12)}
    ws = D.build_window_set(users, 3)
    stats = D.fit_normalization(ws)
    z = D.normalize_set(ws, stats)
    assert stats.v_constant[2]  # lpa is always 80 in the helper data
    np.testing.assert_array_equal(z.v[:, :, 2], 0.0)
    assert np.all(np.isfinite(z.u)) and np.all(np.isfinite(z.v))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_normalization_round_trip(seed):
    users = {f"u{i}": make_user(f"u{i}", 14, seed=seed + i) for i in range(3)}
    ws = D.build_window_set(users, 4)
    stats = D.fit_normalization(ws)
    back = D.denormalize_set(D.normalize_set(ws, stats), stats)
    np.testing.assert_allclose(back.u, ws.u, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(back.v, ws.v, rtol=1e-9, atol=1e-9)
    for k in ws.targets:
        np.testing.assert_allclose(back.targets[k], ws.targets[k], rtol=1e-9, atol=1e-9)
    e = ws.example(0)
    e2 = D.invert_normalization(D.apply_normalization(e, stats), stats)
    np.testing.assert_allclose(e2.v_window, e.v_window, rtol=1e-9, atol=1e-9)


def test_stats_serialize():
    ws = D.build_window_set({"a": make_user("a", 12)}, 3)
    stats = D.fit_normalization(ws)
    again = D.NormalizationStats.from_dict(stats.to_dict())
    np.testing.assert_array_equal(again.u_std, stats.u_std)
    np.testing.assert_array_equal(again.v_constant, stats.v_constant)


def test_empty_normalization_rejected():
    with pytest.raises(ValueError):
        D.fit_normalization([])


def test_goal_labels_strict():
    assert D.goal_labels(np.array([5999, 6000, 6001]), 6000).tolist() == [0, 0, 1]
    assert D.label_goal(8000.0, 8000) == 0


def _cohort(minutes):
    return {f"u{i}": [make_day(f"u{i}", dt.date(2021, 1, 4), minutes_used=m)] for i, m in enumerate(minutes)}


def test_engaged_cohort_selection():
    users = _cohort([10, 50, 30, 20, 40, 0, 60, 70, 5, 15])
    assert D.select_engaged_cohort(users, 0) == sorted(users)
    assert D.select_engaged_cohort(users, 50) == ["u1", "u2", "u4", "u6", "u7"]
    assert D.select_engaged_cohort(users, 90) == ["u7"]
    with pytest.raises(ConfigurationError):
        D.select_engaged_cohort(users, 100)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 300), min_size=1, max_size=30), st.floats(0, 99), st.floats(0, 99))
def test_engaged_cohort_nested(minutes, p1, p2):
    users = _cohort(minutes)
    lo, hi = sorted((p1, p2))
    small, big = set(D.select_engaged_cohort(users, hi)), set(D.select_engaged_cohort(users, lo))
    assert small <= big
    assert len(small) >= 1
