import datetime as dt
import filecmp

import numpy as np
import pytest

from stepcast import ingest, synth
from stepcast.synth import CohortSpec, SpecError, lagged_engagement_correlation

from conftest import make_day


def test_spec_validation():
    with pytest.raises(SpecError):
        CohortSpec(n_users=3, n_days=10, wear_mean_hours=25)
    with pytest.raises(SpecError):
        CohortSpec(n_users=3, n_days=10, nonwear_day_prob=1.5)
    with pytest.raises(SpecError):
        CohortSpec(n_users=3, n_days=10, dow_multipliers=(1, 1, 1, 1, 1, 1, 0))
    with pytest.raises(SpecError):
        CohortSpec(n_users=3, n_days=10, beta=-0.1)
    with pytest.raises(SpecError):
        CohortSpec(n_users=0, n_days=10)


def test_same_seed_same_bytes(tmp_path):
    spec = CohortSpec(n_users=4, n_days=15, seed=5)
    a = synth.generate_cohort(spec).write(tmp_path / "a")
    b = synth.generate_cohort(spec).write(tmp_path / "b")
    for key in a:
        assert filecmp.cmp(a[key], b[key], shallow=False)
    c = synth.generate_cohort(spec.replace(seed=6)).write(tmp_path / "c")
    assert not filecmp.cmp(a["activity"], c["activity"], shallow=False)


def test_streams_pass_ingest_checks(tmp_path, small_cohort):
    paths = small_cohort.write(tmp_path)
    act, eng = ingest.parse_streams(paths["activity"], paths["engagement"])
    for days in ingest.aggregate_streams(act, eng).values():
        for d in days:
            assert d.invariant_violations() == []


def test_planted_invalid_users_are_filtered():
    cohort = synth.generate_cohort(synth.preset_sleep(seed=2))
    kept = ingest.preprocess(cohort.daily())
    planted = set(cohort.ground_truth.loc[cohort.ground_truth.planted_invalid == 1, "user_id"])
    assert len(planted) == 7
    assert not planted & set(kept)


def test_ground_truth_record():
    cohort = synth.generate_cohort(CohortSpec(n_users=5, n_days=30, seed=1))
    gt = cohort.ground_truth
    assert list(gt.user_id) == sorted(cohort.minutes)
    assert (gt.beta == 0.5).all()
    assert np.all(gt.step_level > 0)


def _pair_oracle(daily):
    """Independent within-user lagged correlation built from a date lookup."""
    num = sxx = syy = 0.0
    for days in daily.values():
        by_date = {d.date: d for d in days}
        pairs = [(d.minutes_used, by_date[d.date + dt.timedelta(days=1)].steps)
                 for d in days if d.date + dt.timedelta(days=1) in by_date]
        if len(pairs) < 2:
            continue
        mx = sum(p[0] for p in pairs) / len(pairs)
        my = sum(p[1] for p in pairs) / len(pairs)
        for x, y in pairs:
            num += (x - mx) * (y - my)
            sxx += (x - mx) ** 2
            syy += (y - my) ** 2
    return num / (sxx * syy) ** 0.5


def test_lagged_correlation_matches_oracle(small_cohort):
    daily = small_cohort.daily()
    assert abs(lagged_engagement_correlation(daily) - _pair_oracle(daily)) < 1e-9


def test_lagged_correlation_ignores_gaps():
    days = [make_day("u", dt.date(2021, 1, 4) + dt.timedelta(days=k), steps=1000.0 * (k % 3 + 1),
                     minutes_used=float(k % 3 + 2)) for k in (0, 1, 2, 4, 5, 6)]
    assert lagged_engagement_correlation({"u": days}) == pytest.approx(_pair_oracle({"u": days}))


@pytest.fixture(scope="module")
def coupling_curve():
    out = {}
    for beta in (0.0, 0.25, 0.5):
        rs = [lagged_engagement_correlation(
            synth.generate_cohort(CohortSpec(n_users=60, n_days=180, seed=s, beta=beta)).daily())
            for s in (0, 1)]
        out[beta] = rs
    return out


@pytest.mark.slow
def test_coupling_strength(coupling_curve):
    assert all(abs(r) < 0.05 for r in coupling_curve[0.0])
    assert all(r > 0.3 for r in coupling_curve[0.5])


@pytest.mark.slow
def test_coupling_monotone(coupling_curve):
    for s in range(2):
        assert coupling_curve[0.0][s] < coupling_curve[0.25][s] < coupling_curve[0.5][s]


@pytest.mark.slow
@pytest.mark.parametrize("preset,steps,days,users", [("prediabetes", 5745, 155, 50), ("sleep", 7627, 38, 40)])
def test_preset_calibration(preset, steps, days, users):
    cohort = synth.generate_cohort(synth.PRESETS[preset](seed=0))
    daily = cohort.daily()
    kept = ingest.preprocess(daily)
    assert len(kept) >= users
    valid_days = np.mean([len(d) for d in kept.values()])
    assert abs(valid_days - days) <= 0.2 * days
    all_steps = np.mean([d.steps for ds in kept.values() for d in ds])
    assert abs(all_steps - steps) <= 0.1 * steps
    wear_h = np.mean([d.wear_time for ds in daily.values() for d in ds]) / 60
    assert abs(wear_h - 12.38) <= 0.1 * 12.38
