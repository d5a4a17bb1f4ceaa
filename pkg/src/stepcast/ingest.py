"""Minute-level stream parsing, daily aggregation and validity filtering.

Two minute streams come in (activity and app engagement, one row per
user/date/minute) and per-day feature vectors come out: a 57-dim engagement
vector and an 8-dim activity vector. Parsed streams are kept columnar (pandas
frames, then dense ``(days, 1440)`` arrays per user) because a cohort easily
holds ten million minutes; the record dataclasses are for row-level use.
"""

from __future__ import annotations

import datetime as dt
import os
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

MINUTES_PER_DAY = 1440
MIN_WEAR_MINUTES = 600
MIN_VALID_DAYS = 10

ACTIVITY_COLUMNS = ["user_id", "date", "minute_of_day", "steps", "intensity"]
ENGAGEMENT_COLUMNS = ["user_id", "date", "minute_of_day", "foreground_minutes", "opens"]

ENGAGEMENT_FEATURES = (
    ["minutes_used", "times_opened"]
    + [f"dow_{d}" for d in range(7)]
    + [f"minutes_used_h{h:02d}" for h in range(24)]
    + [f"times_opened_h{h:02d}" for h in range(24)]
)
ACTIVITY_FEATURES = [
    "total_steps",
    "sed_minutes",
    "lpa_minutes",
    "mvpa_minutes",
    "wear_time_minutes",
    "sed_ratio",
    "lpa_ratio",
    "mvpa_ratio",
]
N_ENGAGEMENT = len(ENGAGEMENT_FEATURES)  # 57
N_ACTIVITY = len(ACTIVITY_FEATURES)  # 8

# engagement vector offsets
E_MINUTES, E_OPENS, E_DOW, E_HOURLY_MINUTES, E_HOURLY_OPENS = 0, 1, 2, 9, 33
# activity vector offsets
A_STEPS, A_SED, A_LPA, A_MVPA, A_WEAR, A_SED_RATIO, A_LPA_RATIO, A_MVPA_RATIO = range(8)


class Intensity(IntEnum):
    NONWEAR = 0
    SEDENTARY = 1
    LIGHT = 2
    MVPA = 3

    @property
    def label(self) -> str:
        return _INTENSITY_LABELS[self]

    @classmethod
    def parse(cls, label: str) -> "Intensity":
        try:
            return _LABEL_TO_INTENSITY[label]
        except KeyError:
            raise SchemaError(f"unknown intensity label {label!r}") from None


_INTENSITY_LABELS = {
    Intensity.NONWEAR: "nonwear",
    Intensity.SEDENTARY: "sedentary",
    Intensity.LIGHT: "light",
    Intensity.MVPA: "mvpa",
}
_LABEL_TO_INTENSITY = {v: k for k, v in _INTENSITY_LABELS.items()}
INTENSITY_LABELS = [_INTENSITY_LABELS[i] for i in Intensity]


class IngestError(Exception):
    pass


class ParseError(IngestError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class SchemaError(ParseError):
    pass


class DuplicateRecordError(ParseError):
    pass


class AggregationError(IngestError):
    pass


@dataclass(frozen=True)
class MinuteActivityRecord:
    user_id: str
    date: dt.date
    minute_of_day: int
    steps: int
    intensity: Intensity

    def __post_init__(self):
        if not 0 <= self.minute_of_day < MINUTES_PER_DAY:
            raise SchemaError(f"minute_of_day {self.minute_of_day} outside [0, 1439]")
        if self.steps < 0:
            raise SchemaError(f"negative step count {self.steps}")
        if self.intensity == Intensity.NONWEAR and self.steps != 0:
            raise SchemaError("nonwear minute with nonzero steps")


@dataclass(frozen=True)
class EngagementMinuteRecord:
    user_id: str
    date: dt.date
    minute_of_day: int
    foreground_minutes: float
    opens: int

    def __post_init__(self):
        if not 0 <= self.minute_of_day < MINUTES_PER_DAY:
            raise SchemaError(f"minute_of_day {self.minute_of_day} outside [0, 1439]")
        if not 0.0 <= self.foreground_minutes <= 1.0:
            raise SchemaError(f"foreground_minutes {self.foreground_minutes} outside [0, 1]")
        if self.opens < 0:
            raise SchemaError(f"negative open count {self.opens}")


@dataclass
class DailyFeatures:
    """One user-day: engagement vector (57) and activity vector (8)."""

    user_id: str
    date: dt.date
    day_of_week: int
    engagement: np.ndarray
    activity: np.ndarray

    @property
    def wear_time(self) -> float:
        return float(self.activity[A_WEAR])

    @property
    def steps(self) -> float:
        return float(self.activity[A_STEPS])

    @property
    def minutes_used(self) -> float:
        return float(self.engagement[E_MINUTES])

    def invariant_violations(self, tol: float = 1e-9) -> list[str]:
        """Names of the feature-table invariants this day breaks (empty if none)."""
        bad = []
        e, a = self.engagement, self.activity
        if e.shape != (N_ENGAGEMENT,):
            bad.append(f"engagement dimension {e.shape}")
        if a.shape != (N_ACTIVITY,):
            bad.append(f"activity dimension {a.shape}")
        if bad:
            return bad
        if a[A_SED] + a[A_LPA] + a[A_MVPA] != a[A_WEAR]:
            bad.append("sed + lpa + mvpa != wear time")
        ratios = a[A_SED_RATIO : A_MVPA_RATIO + 1]
        if np.any(ratios < 0) or np.any(ratios > 1):
            bad.append("ratio outside [0, 1]")
        if a[A_WEAR] > 0 and abs(ratios.sum() - 1.0) > tol:
            bad.append("ratios do not sum to 1")
        if a[A_WEAR] == 0 and np.any(ratios != 0):
            bad.append("nonzero ratio on a zero-wear day")
        if abs(e[E_HOURLY_MINUTES:E_HOURLY_OPENS].sum() - e[E_MINUTES]) > tol:
            bad.append("hourly minutes_used do not sum to the total")
        if abs(e[E_HOURLY_OPENS:].sum() - e[E_OPENS]) > tol:
            bad.append("hourly times_opened do not sum to the total")
        onehot = e[E_DOW:E_HOURLY_MINUTES]
        expected = np.zeros(7)
        expected[self.day_of_week] = 1.0
        if not np.array_equal(onehot, expected):
            bad.append("day-of-week one-hot block inconsistent")
        return bad


@dataclass
class UserMinutes:
    """Dense minute grid for one user: row ``k`` is calendar day ``dates[k]``.

    Absent minutes are nonwear with zero steps and zero engagement.
    """

    user_id: str
    dates: np.ndarray  # datetime64[D], strictly increasing
    steps: np.ndarray  # (n_days, 1440) int
    intensity: np.ndarray  # (n_days, 1440) int8 Intensity codes
    foreground: np.ndarray  # (n_days, 1440) float
    opens: np.ndarray  # (n_days, 1440) int

    @classmethod
    def empty(cls, user_id: str, dates: np.ndarray) -> "UserMinutes":
        n = len(dates)
        shape = (n, MINUTES_PER_DAY)
        return cls(
            user_id=user_id,
            dates=np.asarray(dates, dtype="datetime64[D]"),
            steps=np.zeros(shape, dtype=np.int64),
            intensity=np.zeros(shape, dtype=np.int8),
            foreground=np.zeros(shape),
            opens=np.zeros(shape, dtype=np.int64),
        )


def day_of_week(dates) -> np.ndarray:
    """Monday = 0 ... Sunday = 6 for an array of ``datetime64[D]``."""
    days = np.asarray(dates, dtype="datetime64[D]").astype(np.int64)
    return (days + 3) % 7  # 1970-01-01 was a Thursday


def aggregate_minute_arrays(dates, steps, intensity, foreground, opens) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized daily aggregation of dense minute grids.

    Returns ``(engagement, activity)`` of shapes (n, 57) and (n, 8).
    """
    n = len(dates)
    steps = np.asarray(steps)
    intensity = np.asarray(intensity)
    foreground = np.asarray(foreground, dtype=np.float64)
    opens = np.asarray(opens)

    hourly_minutes = foreground.reshape(n, 24, 60).sum(axis=2)
    hourly_opens = opens.reshape(n, 24, 60).sum(axis=2).astype(np.float64)
    engagement = np.zeros((n, N_ENGAGEMENT))
    engagement[:, E_MINUTES] = hourly_minutes.sum(axis=1)
    engagement[:, E_OPENS] = hourly_opens.sum(axis=1)
    engagement[np.arange(n), E_DOW + day_of_week(dates)] = 1.0
    engagement[:, E_HOURLY_MINUTES:E_HOURLY_OPENS] = hourly_minutes
    engagement[:, E_HOURLY_OPENS:] = hourly_opens

    sed = (intensity == Intensity.SEDENTARY).sum(axis=1)
    lpa = (intensity == Intensity.LIGHT).sum(axis=1)
    mvpa = (intensity == Intensity.MVPA).sum(axis=1)
    wear = (intensity != Intensity.NONWEAR).sum(axis=1)
    activity = np.zeros((n, N_ACTIVITY))
    activity[:, A_STEPS] = steps.sum(axis=1)
    activity[:, A_SED] = sed
    activity[:, A_LPA] = lpa
    activity[:, A_MVPA] = mvpa
    activity[:, A_WEAR] = wear
    worn = wear > 0
    for col, count in ((A_SED_RATIO, sed), (A_LPA_RATIO, lpa), (A_MVPA_RATIO, mvpa)):
        activity[worn, col] = count[worn] / wear[worn]
    return engagement, activity


def aggregate_user(minutes: UserMinutes) -> list[DailyFeatures]:
    """Daily features for every day in a user's minute grid, in date order."""
    engagement, activity = aggregate_minute_arrays(
        minutes.dates, minutes.steps, minutes.intensity, minutes.foreground, minutes.opens
    )
    dows = day_of_week(minutes.dates)
    return [
        DailyFeatures(
            user_id=minutes.user_id,
            date=d.astype(dt.date),
            day_of_week=int(dow),
            engagement=engagement[k],
            activity=activity[k],
        )
        for k, (d, dow) in enumerate(zip(minutes.dates, dows))
    ]


def _frame_from_records(records, columns) -> pd.DataFrame:
    rows = []
    for r in records:
        row = [getattr(r, c) for c in columns]
        rows.append(row)
    return pd.DataFrame(rows, columns=columns)


def activity_frame(records: Iterable[MinuteActivityRecord]) -> pd.DataFrame:
    df = _frame_from_records(records, ACTIVITY_COLUMNS)
    if len(df):
        df["intensity"] = df["intensity"].map(int).astype(np.int8)
        df["date"] = pd.to_datetime(df["date"]).values.astype("datetime64[D]")
    return _typed_activity(df)


def engagement_frame(records: Iterable[EngagementMinuteRecord]) -> pd.DataFrame:
    df = _frame_from_records(records, ENGAGEMENT_COLUMNS)
    if len(df):
        df["date"] = pd.to_datetime(df["date"]).values.astype("datetime64[D]")
    return _typed_engagement(df)


def _typed_activity(df: pd.DataFrame) -> pd.DataFrame:
    if not len(df):
        return pd.DataFrame({
            "user_id": pd.Series([], dtype=object),
            "date": pd.Series([], dtype="datetime64[s]"),
            "minute_of_day": pd.Series([], dtype=np.int64),
            "steps": pd.Series([], dtype=np.int64),
            "intensity": pd.Series([], dtype=np.int8),
        })
    return df.astype({"minute_of_day": np.int64, "steps": np.int64, "intensity": np.int8})


def _typed_engagement(df: pd.DataFrame) -> pd.DataFrame:
    if not len(df):
        return pd.DataFrame({
            "user_id": pd.Series([], dtype=object),
            "date": pd.Series([], dtype="datetime64[s]"),
            "minute_of_day": pd.Series([], dtype=np.int64),
            "foreground_minutes": pd.Series([], dtype=np.float64),
            "opens": pd.Series([], dtype=np.int64),
        })
    return df.astype({"minute_of_day": np.int64, "foreground_minutes": np.float64, "opens": np.int64})


def iter_activity_records(df: pd.DataFrame):
    for user, date, minute, steps, code in df[ACTIVITY_COLUMNS].itertuples(index=False):
        yield MinuteActivityRecord(str(user), pd.Timestamp(date).date(), int(minute), int(steps),
                                   Intensity(int(code)))


def iter_engagement_records(df: pd.DataFrame):
    for user, date, minute, fg, opens in df[ENGAGEMENT_COLUMNS].itertuples(index=False):
        yield EngagementMinuteRecord(str(user), pd.Timestamp(date).date(), int(minute), float(fg),
                                     int(opens))


def _read_csv(path, columns: list[str]) -> pd.DataFrame:
    name = os.fspath(path) if not hasattr(path, "read") else getattr(path, "name", "<stream>")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    except pd.errors.EmptyDataError:
        return pd.DataFrame({c: pd.Series([], dtype=str) for c in columns})
    except pd.errors.ParserError as exc:
        raise ParseError(f"malformed CSV: {exc}", name) from None
    if list(df.columns) != columns:
        raise SchemaError(f"expected header {','.join(columns)}, got {','.join(map(str, df.columns))}", name, 1)
    return df


def _bad_row(mask, name: str, message: str, cls=ParseError):
    if mask.any():
        first = int(np.flatnonzero(np.asarray(mask))[0])
        raise cls(message, name, first + 2)  # +1 header, +1 one-based


def _convert_common(df: pd.DataFrame, name: str) -> pd.DataFrame:
    _bad_row((df["user_id"] == "").values, name, "empty user_id")
    dates = pd.to_datetime(df["date"], format="%Y-%m-%d", errors="coerce")
    _bad_row(dates.isna().values, name, "unparseable date (expected YYYY-MM-DD)")
    minute = pd.to_numeric(df["minute_of_day"], errors="coerce")
    _bad_row(minute.isna().values | (minute % 1 != 0).values, name, "minute_of_day is not an integer")
    _bad_row(((minute < 0) | (minute >= MINUTES_PER_DAY)).values, name,
             "minute_of_day outside [0, 1439]", SchemaError)
    out = pd.DataFrame({
        "user_id": df["user_id"].astype(object),
        "date": dates.values.astype("datetime64[D]"),
        "minute_of_day": minute.astype(np.int64),
    })
    return out


def _check_duplicates(df: pd.DataFrame, name: str) -> None:
    dup = df.duplicated(subset=["user_id", "date", "minute_of_day"], keep="first").values
    _bad_row(dup, name, "duplicate (user_id, date, minute_of_day) record", DuplicateRecordError)


def _sort(df: pd.DataFrame) -> pd.DataFrame:
    return df.sort_values(["user_id", "date", "minute_of_day"], kind="stable").reset_index(drop=True)


def parse_activity(path) -> pd.DataFrame:
    name = str(path)
    raw = _read_csv(path, ACTIVITY_COLUMNS)
    if not len(raw):
        return _typed_activity(raw.iloc[0:0])
    df = _convert_common(raw, name)
    steps = pd.to_numeric(raw["steps"], errors="coerce")
    _bad_row(steps.isna().values | (steps % 1 != 0).values, name, "steps is not an integer")
    _bad_row((steps < 0).values, name, "negative step count", SchemaError)
    codes = raw["intensity"].map(_LABEL_TO_INTENSITY)
    if codes.isna().any():
        first = int(np.flatnonzero(codes.isna().values)[0])
        raise SchemaError(f"unknown intensity label {raw['intensity'].iloc[first]!r}", name, first + 2)
    df["steps"] = steps.astype(np.int64)
    df["intensity"] = codes.astype(np.int8)
    _bad_row(((df["intensity"] == Intensity.NONWEAR) & (df["steps"] != 0)).values, name,
             "nonwear minute with nonzero steps", SchemaError)
    _check_duplicates(df, name)
    return _sort(df)


def parse_engagement(path) -> pd.DataFrame:
    name = str(path)
    raw = _read_csv(path, ENGAGEMENT_COLUMNS)
    if not len(raw):
        return _typed_engagement(raw.iloc[0:0])
    df = _convert_common(raw, name)
    fg = pd.to_numeric(raw["foreground_minutes"], errors="coerce")
    _bad_row(fg.isna().values, name, "foreground_minutes is not a number")
    _bad_row(((fg < 0) | (fg > 1)).values, name, "foreground_minutes outside [0, 1]", SchemaError)
    opens = pd.to_numeric(raw["opens"], errors="coerce")
    _bad_row(opens.isna().values | (opens % 1 != 0).values, name, "opens is not an integer")
    _bad_row((opens < 0).values, name, "negative open count", SchemaError)
    df["foreground_minutes"] = fg.astype(np.float64)
    df["opens"] = opens.astype(np.int64)
    _check_duplicates(df, name)
    return _sort(df)


def parse_streams(activity_file, engagement_file) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Parse and validate both minute streams.

    Returns columnar record frames sorted by (user_id, date, minute_of_day).
    Raises :class:`ParseError` (with file and line), :class:`SchemaError` or
    :class:`DuplicateRecordError`.
    """
    return parse_activity(activity_file), parse_engagement(engagement_file)


def write_activity_csv(df: pd.DataFrame, path) -> None:
    out = df[ACTIVITY_COLUMNS].copy()
    out["date"] = pd.to_datetime(out["date"]).dt.strftime("%Y-%m-%d")
    out["intensity"] = np.asarray(INTENSITY_LABELS, dtype=object)[out["intensity"].to_numpy(dtype=np.int64)]
    out.to_csv(path, index=False, lineterminator="\n")


def write_engagement_csv(df: pd.DataFrame, path) -> None:
    out = df[ENGAGEMENT_COLUMNS].copy()
    out["date"] = pd.to_datetime(out["date"]).dt.strftime("%Y-%m-%d")
    out["foreground_minutes"] = [repr(float(v)) for v in out["foreground_minutes"]]
    out.to_csv(path, index=False, lineterminator="\n")


def frames_to_minutes(activity: pd.DataFrame, engagement: pd.DataFrame) -> dict[str, UserMinutes]:
    """Scatter parsed streams onto dense per-user minute grids.

    A user-day exists if either stream has a record for it.
    """
    users: dict[str, UserMinutes] = {}
    keys = pd.concat([activity[["user_id", "date"]], engagement[["user_id", "date"]]], ignore_index=True)
    if not len(keys):
        return users
    keys = keys.drop_duplicates().sort_values(["user_id", "date"], kind="stable")
    act_groups = dict(tuple(activity.groupby("user_id", sort=False))) if len(activity) else {}
    eng_groups = dict(tuple(engagement.groupby("user_id", sort=False))) if len(engagement) else {}
    for user, user_keys in keys.groupby("user_id", sort=True):
        dates = np.asarray(user_keys["date"].values, dtype="datetime64[D]")
        um = UserMinutes.empty(str(user), dates)
        if user in act_groups:
            a = act_groups[user]
            row = np.searchsorted(dates, a["date"].values.astype("datetime64[D]"))
            col = a["minute_of_day"].to_numpy()
            um.steps[row, col] = a["steps"].to_numpy()
            um.intensity[row, col] = a["intensity"].to_numpy()
        if user in eng_groups:
            e = eng_groups[user]
            row = np.searchsorted(dates, e["date"].values.astype("datetime64[D]"))
            col = e["minute_of_day"].to_numpy()
            um.foreground[row, col] = e["foreground_minutes"].to_numpy()
            um.opens[row, col] = e["opens"].to_numpy()
        users[str(user)] = um
    return users


def minutes_to_frames(users: Mapping[str, UserMinutes]) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Inverse of :func:`frames_to_minutes`, keeping only minutes with content.

    Activity rows are emitted for worn minutes; engagement rows for minutes
    with nonzero foreground time or opens.
    """
    act_parts, eng_parts = [], []
    for user in sorted(users):
        um = users[user]
        r, c = np.nonzero(um.intensity != Intensity.NONWEAR)
        if len(r):
            act_parts.append(pd.DataFrame({
                "user_id": np.full(len(r), user, dtype=object),
                "date": um.dates[r],
                "minute_of_day": c.astype(np.int64),
                "steps": um.steps[r, c].astype(np.int64),
                "intensity": um.intensity[r, c].astype(np.int8),
            }))
        r, c = np.nonzero((um.foreground > 0) | (um.opens > 0))
        if len(r):
            eng_parts.append(pd.DataFrame({
                "user_id": np.full(len(r), user, dtype=object),
                "date": um.dates[r],
                "minute_of_day": c.astype(np.int64),
                "foreground_minutes": um.foreground[r, c],
                "opens": um.opens[r, c].astype(np.int64),
            }))
    act = pd.concat(act_parts, ignore_index=True) if act_parts else _typed_activity(pd.DataFrame())
    eng = pd.concat(eng_parts, ignore_index=True) if eng_parts else _typed_engagement(pd.DataFrame())
    return act, eng


def _as_frame(minutes, kind: str) -> pd.DataFrame:
    if isinstance(minutes, pd.DataFrame):
        return minutes
    return activity_frame(minutes) if kind == "activity" else engagement_frame(minutes)


def aggregate_day(activity_minutes, engagement_minutes) -> DailyFeatures:
    """Aggregate one user-day of minute records into its feature vectors.

    Accepts record iterables or parsed frames. All records must share one
    (user_id, date); missing minutes count as nonwear with no engagement.
    """
    act = _as_frame(activity_minutes, "activity")
    eng = _as_frame(engagement_minutes, "engagement")
    keys = pd.concat([act[["user_id", "date"]], eng[["user_id", "date"]]], ignore_index=True)
    keys = keys.drop_duplicates()
    if len(keys) == 0:
        raise AggregationError("no records to aggregate")
    if len(keys) > 1:
        raise AggregationError(
            f"records span {len(keys)} distinct (user, date) pairs; aggregate_day takes one user-day"
        )
    if act.duplicated(subset=["minute_of_day"]).any() or eng.duplicated(subset=["minute_of_day"]).any():
        raise DuplicateRecordError("duplicate minute_of_day within a user-day")
    users = frames_to_minutes(act, eng)
    (um,) = users.values()
    return aggregate_user(um)[0]


def aggregate_streams(activity: pd.DataFrame, engagement: pd.DataFrame) -> dict[str, list[DailyFeatures]]:
    return {user: aggregate_user(um) for user, um in frames_to_minutes(activity, engagement).items()}


def filter_valid_days(days: Sequence[DailyFeatures], min_wear_minutes: int = MIN_WEAR_MINUTES) -> list[DailyFeatures]:
    """Keep days with at least ``min_wear_minutes`` of wear, in their original order."""
    return [d for d in days if d.wear_time >= min_wear_minutes]


def filter_valid_users(users: Mapping[str, Sequence[DailyFeatures]],
                       min_days: int = MIN_VALID_DAYS) -> dict[str, list[DailyFeatures]]:
    """Keep users with at least ``min_days`` valid days."""
    return {u: list(days) for u, days in users.items() if len(days) >= min_days}


def preprocess(users: Mapping[str, Sequence[DailyFeatures]]) -> dict[str, list[DailyFeatures]]:
    """Day filter followed by user filter."""
    return filter_valid_users({u: filter_valid_days(days) for u, days in users.items()})


def load_cohort(activity_file, engagement_file) -> dict[str, list[DailyFeatures]]:
    """Parse, aggregate and filter a pair of minute-stream CSVs."""
    act, eng = parse_streams(activity_file, engagement_file)
    return preprocess(aggregate_streams(act, eng))
