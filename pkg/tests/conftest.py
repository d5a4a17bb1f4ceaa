import datetime as dt

import numpy as np
import pytest

from stepcast import synth
from stepcast.ingest import N_ACTIVITY, N_ENGAGEMENT, DailyFeatures, day_of_week


def make_day(user, date, steps=5000.0, minutes_used=10.0, wear=700.0):
    """A hand-built DailyFeatures with consistent invariants."""
    e = np.zeros(N_ENGAGEMENT)
    e[0] = minutes_used
    e[1] = 2.0
    dow = int(day_of_week(np.array([np.datetime64(date, "D")]))[0])
    e[2 + dow] = 1.0
    e[9 + 12] = minutes_used
    e[33 + 12] = 2.0
    a = np.zeros(N_ACTIVITY)
    a[0] = steps
    a[1], a[2], a[3] = wear - 100, 80, 20
    a[4] = wear
    a[5:8] = a[1:4] / wear
    return DailyFeatures(user, date, dow, e, a)


def make_user(user, n_days, start=dt.date(2021, 3, 1), gaps=(), seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_days):
        if k in gaps:
            continue
        out.append(make_day(user, start + dt.timedelta(days=k), steps=float(rng.integers(1000, 12000)),
                            minutes_used=float(rng.integers(0, 60))))
    return out


@pytest.fixture(scope="session")
def small_cohort():
    return synth.generate_cohort(synth.CohortSpec(n_users=6, n_days=40, seed=3))


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
