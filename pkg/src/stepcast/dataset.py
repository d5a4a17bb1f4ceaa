"""Windowed examples, participant splits, z-scoring, goal labels and engagement cohorts."""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from stepcast.ingest import (
    A_LPA,
    A_SED,
    A_STEPS,
    A_WEAR,
    N_ACTIVITY,
    N_ENGAGEMENT,
    DailyFeatures,
)

WINDOW_SIZES = (3, 7, 14, 21)
OUTCOME_INDEX = {"steps": A_STEPS, "sed_minutes": A_SED, "wear_time": A_WEAR, "lpa_minutes": A_LPA}
OUTCOMES = tuple(OUTCOME_INDEX)
STD_FLOOR = 1e-8


class ConfigurationError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass
class WindowedExample:
    user_id: str
    target_date: dt.date
    u_window: np.ndarray  # (w, 57)
    v_window: np.ndarray  # (w, 8)
    target: dict[str, float]

    @property
    def window_size(self) -> int:
        return self.u_window.shape[0]


@dataclass
class WindowSet:
    """Examples stacked into arrays; row ``i`` is one :class:`WindowedExample`."""

    user_ids: np.ndarray  # (N,) object
    target_dates: np.ndarray  # (N,) datetime64[D]
    u: np.ndarray  # (N, w, 57)
    v: np.ndarray  # (N, w, 8)
    targets: dict[str, np.ndarray]  # outcome -> (N,)

    def __len__(self) -> int:
        return len(self.user_ids)

    @property
    def window_size(self) -> int:
        return self.u.shape[1]

    def subset(self, mask_or_index) -> "WindowSet":
        idx = np.asarray(mask_or_index)
        return WindowSet(
            user_ids=self.user_ids[idx],
            target_dates=self.target_dates[idx],
            u=self.u[idx],
            v=self.v[idx],
            targets={k: t[idx] for k, t in self.targets.items()},
        )

    def for_users(self, users: Iterable[str]) -> "WindowSet":
        return self.subset(np.isin(self.user_ids, np.asarray(sorted(users), dtype=object)))

    def example(self, i: int) -> WindowedExample:
        return WindowedExample(
            user_id=str(self.user_ids[i]),
            target_date=self.target_dates[i].astype(dt.date),
            u_window=self.u[i],
            v_window=self.v[i],
            target={k: float(t[i]) for k, t in self.targets.items()},
        )

    def examples(self) -> list[WindowedExample]:
        return [self.example(i) for i in range(len(self))]


def _check_window(w: int) -> None:
    if not isinstance(w, (int, np.integer)) or w <= 0:
        raise ConfigurationError(f"window size must be a positive integer, got {w!r}")


def _check_outcomes(outcomes) -> tuple[str, ...]:
    outcomes = tuple(outcomes)
    unknown = [o for o in outcomes if o not in OUTCOME_INDEX]
    if unknown:
        raise ConfigurationError(f"unknown outcomes {unknown}; expected a subset of {list(OUTCOMES)}")
    return outcomes


def _window_positions(dates: np.ndarray, w: int, contiguous: bool) -> np.ndarray:
    """Target positions ``t`` (0-based) whose window is days ``t-w .. t-1``."""
    n = len(dates)
    if n <= w:
        return np.zeros(0, dtype=np.int64)
    targets = np.arange(w, n)
    if not contiguous:
        return targets
    steps = np.diff(dates.astype(np.int64)) == 1  # steps[k]: day k -> k+1 consecutive
    run = np.concatenate([[0], np.cumsum(~steps)])  # run id per day
    return targets[run[targets] == run[targets - w]]


def _user_arrays(days: Sequence[DailyFeatures]):
    dates = np.array([np.datetime64(d.date, "D") for d in days], dtype="datetime64[D]")
    if len(dates) > 1 and np.any(np.diff(dates.astype(np.int64)) <= 0):
        raise ConfigurationError(f"days for user {days[0].user_id} are not in increasing date order")
    E = np.array([d.engagement for d in days], dtype=np.float64).reshape(len(days), N_ENGAGEMENT)
    A = np.array([d.activity for d in days], dtype=np.float64).reshape(len(days), N_ACTIVITY)
    return dates, E, A


def build_window_set(users: Mapping[str, Sequence[DailyFeatures]], w: int,
                     outcomes: Iterable[str] = OUTCOMES,
                     require_contiguous_days: bool = False) -> WindowSet:
    """Stacked windows for every user, in sorted user order then date order."""
    _check_window(w)
    outcomes = _check_outcomes(outcomes)
    parts_u, parts_v, parts_y, ids, tdates = [], [], [], [], []
    for user in sorted(users):
        days = users[user]
        if len(days) <= w:
            continue
        dates, E, A = _user_arrays(days)
        t = _window_positions(dates, w, require_contiguous_days)
        if not len(t):
            continue
        # sliding_window_view yields windows starting at s = t - w
        parts_u.append(sliding_window_view(E, w, axis=0).transpose(0, 2, 1)[t - w])
        parts_v.append(sliding_window_view(A, w, axis=0).transpose(0, 2, 1)[t - w])
        parts_y.append(A[t])
        ids.append(np.full(len(t), user, dtype=object))
        tdates.append(dates[t])
    if not ids:
        return WindowSet(
            user_ids=np.zeros(0, dtype=object), target_dates=np.zeros(0, dtype="datetime64[D]"),
            u=np.zeros((0, w, N_ENGAGEMENT)), v=np.zeros((0, w, N_ACTIVITY)),
            targets={o: np.zeros(0) for o in outcomes},
        )
    Y = np.concatenate(parts_y)
    return WindowSet(
        user_ids=np.concatenate(ids),
        target_dates=np.concatenate(tdates),
        u=np.ascontiguousarray(np.concatenate(parts_u)),
        v=np.ascontiguousarray(np.concatenate(parts_v)),
        targets={o: Y[:, OUTCOME_INDEX[o]].copy() for o in outcomes},
    )


def build_windows(days: Sequence[DailyFeatures], w: int, outcomes: Iterable[str] = OUTCOMES,
                  require_contiguous_days: bool = False) -> list[WindowedExample]:
    """Windows over one user's valid-day sequence.

    The example for position ``t`` uses days ``t-w .. t-1`` as input and day
    ``t`` as target, giving ``max(0, n - w)`` examples when gaps are allowed.
    """
    _check_window(w)
    if not days:
        return []
    ws = build_window_set({days[0].user_id: days}, w, outcomes, require_contiguous_days)
    return ws.examples()


def stack_examples(examples: Sequence[WindowedExample]) -> WindowSet:
    if not examples:
        raise ValueError("cannot stack an empty example list")
    sizes = {e.window_size for e in examples}
    if len(sizes) != 1:
        raise ConfigurationError(f"mixed window sizes {sorted(sizes)}")
    outcomes = list(examples[0].target)
    return WindowSet(
        user_ids=np.array([e.user_id for e in examples], dtype=object),
        target_dates=np.array([np.datetime64(e.target_date, "D") for e in examples]),
        u=np.stack([e.u_window for e in examples]).astype(np.float64),
        v=np.stack([e.v_window for e in examples]).astype(np.float64),
        targets={o: np.array([e.target[o] for e in examples], dtype=np.float64) for o in outcomes},
    )


@dataclass(frozen=True)
class SplitAssignment:
    train_users: frozenset
    val_users: frozenset
    test_users: frozenset
    seed: int

    def of(self, user: str) -> str:
        for name in ("train", "val", "test"):
            if user in getattr(self, f"{name}_users"):
                return name
        raise KeyError(user)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_participants(users: Iterable[str], test_fraction: float = 0.2, val_fraction: float = 0.1,
                       seed: int = 0) -> SplitAssignment:
    """Seeded participant-level train/val/test partition.

    ``n_test = max(1, round(n * test_fraction))``; validation likewise (with a
    minimum of one when ``val_fraction > 0``); the rest train.
    """
    if not 0 < test_fraction < 1:
        raise SplitError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if not 0 <= val_fraction < 1 - test_fraction:
        raise SplitError(f"val_fraction must lie in [0, 1 - test_fraction), got {val_fraction}")
    ordered = sorted(set(users))
    n = len(ordered)
    if n < 3:
        raise SplitError(f"need at least 3 users to split, got {n}")
    n_test = max(1, _round_half_up(n * test_fraction))
    n_val = max(1, _round_half_up(n * val_fraction)) if val_fraction > 0 else 0
    if n - n_test - n_val < 1:
        raise SplitError(f"{n} users leave no training participants")
    perm = np.random.default_rng(seed).permutation(n)
    picked = [ordered[i] for i in perm]
    return SplitAssignment(
        test_users=frozenset(picked[:n_test]),
        val_users=frozenset(picked[n_test : n_test + n_val]),
        train_users=frozenset(picked[n_test + n_val :]),
        seed=seed,
    )


@dataclass
class NormalizationStats:
    u_mean: np.ndarray
    u_std: np.ndarray
    v_mean: np.ndarray
    v_std: np.ndarray
    target_mean: dict[str, float]
    target_std: dict[str, float]
    u_constant: np.ndarray = field(default=None)
    v_constant: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.u_constant is None:
            self.u_constant = self.u_std <= STD_FLOOR
        if self.v_constant is None:
            self.v_constant = self.v_std <= STD_FLOOR
        self.u_std = np.maximum(self.u_std, STD_FLOOR)
        self.v_std = np.maximum(self.v_std, STD_FLOOR)
        self.target_std = {k: max(float(s), STD_FLOOR) for k, s in self.target_std.items()}

    def normalize_target(self, outcome: str, y):
        return (np.asarray(y, dtype=np.float64) - self.target_mean[outcome]) / self.target_std[outcome]

    def denormalize_target(self, outcome: str, z):
        return np.asarray(z, dtype=np.float64) * self.target_std[outcome] + self.target_mean[outcome]

    def to_dict(self) -> dict:
        return {
            "u_mean": self.u_mean.tolist(), "u_std": self.u_std.tolist(),
            "v_mean": self.v_mean.tolist(), "v_std": self.v_std.tolist(),
            "u_constant": self.u_constant.astype(int).tolist(),
            "v_constant": self.v_constant.astype(int).tolist(),
            "target_mean": dict(self.target_mean), "target_std": dict(self.target_std),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            u_mean=np.asarray(d["u_mean"], dtype=np.float64), u_std=np.asarray(d["u_std"], dtype=np.float64),
            v_mean=np.asarray(d["v_mean"], dtype=np.float64), v_std=np.asarray(d["v_std"], dtype=np.float64),
            target_mean={k: float(v) for k, v in d["target_mean"].items()},
            target_std={k: float(v) for k, v in d["target_std"].items()},
            u_constant=np.asarray(d["u_constant"], dtype=bool),
            v_constant=np.asarray(d["v_constant"], dtype=bool),
        )


def _as_set(examples) -> WindowSet:
    return examples if isinstance(examples, WindowSet) else stack_examples(list(examples))


def fit_normalization(train_examples) -> NormalizationStats:
    """Per-feature mean and population std over every window row of the training examples."""
    if not isinstance(train_examples, WindowSet) and not len(train_examples):
        raise ValueError("cannot fit normalization on an empty training set")
    ws = _as_set(train_examples)
    if len(ws) == 0:
        raise ValueError("cannot fit normalization on an empty training set")
    U = ws.u.reshape(-1, ws.u.shape[-1])
    V = ws.v.reshape(-1, ws.v.shape[-1])
    return NormalizationStats(
        u_mean=U.mean(axis=0), u_std=U.std(axis=0),
        v_mean=V.mean(axis=0), v_std=V.std(axis=0),
        target_mean={k: float(t.mean()) for k, t in ws.targets.items()},
        target_std={k: float(t.std()) for k, t in ws.targets.items()},
    )


def _z(x, mean, std, constant):
    z = (x - mean) / std
    return np.where(constant, 0.0, z)


def normalize_set(ws: WindowSet, stats: NormalizationStats) -> WindowSet:
    return WindowSet(
        user_ids=ws.user_ids, target_dates=ws.target_dates,
        u=_z(ws.u, stats.u_mean, stats.u_std, stats.u_constant),
        v=_z(ws.v, stats.v_mean, stats.v_std, stats.v_constant),
        targets={k: stats.normalize_target(k, t) for k, t in ws.targets.items()},
    )


def denormalize_set(ws: WindowSet, stats: NormalizationStats) -> WindowSet:
    return WindowSet(
        user_ids=ws.user_ids, target_dates=ws.target_dates,
        u=np.where(stats.u_constant, stats.u_mean, ws.u * stats.u_std + stats.u_mean),
        v=np.where(stats.v_constant, stats.v_mean, ws.v * stats.v_std + stats.v_mean),
        targets={k: stats.denormalize_target(k, t) for k, t in ws.targets.items()},
    )


def apply_normalization(example: WindowedExample, stats: NormalizationStats) -> WindowedExample:
    return WindowedExample(
        user_id=example.user_id, target_date=example.target_date,
        u_window=_z(example.u_window, stats.u_mean, stats.u_std, stats.u_constant),
        v_window=_z(example.v_window, stats.v_mean, stats.v_std, stats.v_constant),
        target={k: float(stats.normalize_target(k, y)) for k, y in example.target.items()},
    )


def invert_normalization(example: WindowedExample, stats: NormalizationStats) -> WindowedExample:
    return WindowedExample(
        user_id=example.user_id, target_date=example.target_date,
        u_window=np.where(stats.u_constant, stats.u_mean, example.u_window * stats.u_std + stats.u_mean),
        v_window=np.where(stats.v_constant, stats.v_mean, example.v_window * stats.v_std + stats.v_mean),
        target={k: float(stats.denormalize_target(k, y)) for k, y in example.target.items()},
    )


def label_goal(example, threshold: float) -> int:
    """1 if next-day steps are strictly above ``threshold``."""
    steps = example.target["steps"] if isinstance(example, WindowedExample) else example
    return int(steps > threshold)


def goal_labels(steps: np.ndarray, threshold: float) -> np.ndarray:
    return (np.asarray(steps) > threshold).astype(np.float64)


def mean_minutes_used(days: Sequence[DailyFeatures]) -> float:
    return float(np.mean([d.minutes_used for d in days])) if days else 0.0


def select_engaged_cohort(users: Mapping[str, Sequence[DailyFeatures]], percentile: float) -> list[str]:
    """Users at or above ``percentile`` of the mean-daily-app-minutes ranking.

    The top ``ceil(n * (100 - percentile) / 100)`` users are kept (ties by
    user id); percentile 0 keeps everyone. Returned in sorted id order.
    """
    if not 0 <= percentile < 100:
        raise ConfigurationError(f"percentile must lie in [0, 100), got {percentile}")
    ranked = sorted(users, key=lambda u: (-mean_minutes_used(users[u]), u))
    keep = math.ceil(len(ranked) * (100 - percentile) / 100)
    return sorted(ranked[:keep])
