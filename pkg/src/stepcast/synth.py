"""Synthetic minute-level cohorts with a tunable engagement-to-activity coupling.

Each user has a latent step level, an app-adherence level, a personal weekly
rhythm and a slowly drifting log-level. Every participation day draws a wear
window, places the day's steps into worn minutes and lays app sessions across
waking hours. Next-day steps are scaled by ``max(1 + beta * tanh(z), 0.05)``,
where ``z`` is today's app use standardized against the user's habitual use,
so ``beta`` bounds the relative effect and ``beta = 0`` removes it.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from stepcast.ingest import (
    MINUTES_PER_DAY,
    DailyFeatures,
    Intensity,
    UserMinutes,
    aggregate_user,
    minutes_to_frames,
    write_activity_csv,
    write_engagement_csv,
)

MVPA_STEP_RATE = 100  # steps/min at or above which a minute counts as mvpa
START_DATE = np.datetime64("2020-01-06", "D")  # a Monday

# Monday..Sunday; mean 1
DEFAULT_DOW_MULTIPLIERS = (1.04, 1.06, 1.03, 1.05, 1.02, 0.93, 0.87)


class SpecError(ValueError):
    """The cohort specification cannot be generated."""


@dataclass(frozen=True)
class CohortSpec:
    n_users: int
    n_days: int
    seed: int = 0
    beta: float = 0.5
    mean_steps: float = 5745.0
    wear_mean_hours: float = 12.38
    wear_std_hours: float = 2.5
    dow_multipliers: tuple = DEFAULT_DOW_MULTIPLIERS
    nonwear_day_prob: float = 0.12
    step_noise_sigma: float = 0.15
    level_sigma: float = 0.7
    weekly_sigma: float = 0.2
    weekly_persistence: float = 0.6
    regime_sigma: float = 0.0
    regime_switch_prob: float = 0.0
    drift_sigma: float = 0.15
    drift_rho: float = 0.8
    adherence_log_mean: float = math.log(12.0)  # median app minutes/day
    adherence_sigma: float = 0.6
    daily_use_sigma: float = 0.5
    mean_session_minutes: float = 3.0
    participation_fraction: float = 0.75
    invalid_user_fraction: float = 0.05

    def __post_init__(self):
        if self.n_users < 1 or self.n_days < 1:
            raise SpecError("n_users and n_days must be positive")
        if self.beta < 0:
            raise SpecError("coupling beta must be non-negative")
        if not 0 < self.wear_mean_hours <= 24 or self.wear_std_hours < 0:
            raise SpecError(f"infeasible wear time {self.wear_mean_hours} h +/- {self.wear_std_hours}")
        if len(self.dow_multipliers) != 7 or min(self.dow_multipliers) <= 0:
            raise SpecError("need 7 positive day-of-week multipliers")
        for name in ("nonwear_day_prob", "invalid_user_fraction", "participation_fraction",
                     "weekly_persistence", "regime_switch_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise SpecError(f"{name} must lie in [0, 1]")
        if self.participation_fraction == 0:
            raise SpecError("participation_fraction must be positive")
        if not 0 <= self.drift_rho < 1:
            raise SpecError("drift_rho must lie in [0, 1)")
        if self.mean_steps <= 0 or self.mean_session_minutes <= 0:
            raise SpecError("mean_steps and mean_session_minutes must be positive")
        if min(self.step_noise_sigma, self.level_sigma, self.weekly_sigma, self.drift_sigma,
               self.adherence_sigma, self.daily_use_sigma, self.regime_sigma) < 0:
            raise SpecError("scale parameters must be non-negative")

    @property
    def n_invalid_users(self) -> int:
        return int(round(self.n_users * self.invalid_user_fraction))

    @property
    def on_wear_mean_hours(self) -> float:
        # partial-wear days average 3.25 h; solve for the worn-day mean
        p = self.nonwear_day_prob
        return min((self.wear_mean_hours - p * 3.25) / (1 - p), 23.0) if p < 1 else 0.0

    def replace(self, **changes) -> "CohortSpec":
        return CohortSpec(**{**asdict(self), **changes})


def preset_prediabetes(seed: int = 0, beta: float = 0.5) -> CohortSpec:
    return CohortSpec(n_users=58, n_days=270, seed=seed, beta=beta, mean_steps=5745.0,
                      participation_fraction=0.67, invalid_user_fraction=3 / 58)


def preset_sleep(seed: int = 0, beta: float = 0.5) -> CohortSpec:
    return CohortSpec(n_users=51, n_days=60, seed=seed, beta=beta, mean_steps=7627.0,
                      participation_fraction=0.78, invalid_user_fraction=7 / 51)


def preset_weekly(seed: int = 0, beta: float = 0.5) -> CohortSpec:
    """Prediabetes-sized cohort with strong user-specific weekly cycles.

    Activity levels also shift at week boundaries, so the last seven days
    carry most of the signal about the next one.
    """
    return replace(
        preset_prediabetes(seed, beta), regime_sigma=0.35, regime_switch_prob=0.4,
        weekly_sigma=0.45, weekly_persistence=0.3, nonwear_day_prob=0.02,
        wear_mean_hours=14.0, wear_std_hours=1.0, drift_sigma=0.1)


PRESETS = {"prediabetes": preset_prediabetes, "sleep": preset_sleep, "weekly": preset_weekly}


@dataclass
class SyntheticCohort:
    spec: CohortSpec
    minutes: dict[str, UserMinutes]
    ground_truth: pd.DataFrame
    _daily: dict[str, list[DailyFeatures]] | None = field(default=None, repr=False)

    def daily(self) -> dict[str, list[DailyFeatures]]:
        if self._daily is None:
            self._daily = {u: aggregate_user(m) for u, m in self.minutes.items()}
        return self._daily

    def frames(self) -> tuple[pd.DataFrame, pd.DataFrame]:
        return minutes_to_frames(self.minutes)

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"output directory {out} is not writable")
        act, eng = self.frames()
        paths = {
            "activity": out / "activity.csv",
            "engagement": out / "engagement.csv",
            "ground_truth": out / "ground_truth.csv",
        }
        write_activity_csv(act, paths["activity"])
        write_engagement_csv(eng, paths["engagement"])
        self.ground_truth.to_csv(paths["ground_truth"], index=False, lineterminator="\n",
                                 float_format="%.10g")
        return paths


def _participation_days(spec: CohortSpec, rng: np.random.Generator, invalid: bool) -> int:
    if invalid:
        return int(rng.integers(3, 10))  # cannot reach 10 valid days
    f = spec.participation_fraction
    if f >= 1:
        return spec.n_days
    conc = 2.5
    length = int(round(spec.n_days * rng.beta(f * conc, (1 - f) * conc)))
    return int(min(spec.n_days, max(length, min(30, spec.n_days))))


def _place_wear(rng, wear_minutes: int) -> tuple[int, int]:
    start = int(round(rng.normal(7.0 * 60, 60)))
    start = min(max(start, 0), MINUTES_PER_DAY - wear_minutes)
    return start, start + wear_minutes


def _place_steps(rng, steps_total: int, wear: tuple[int, int], mvpa_share: float,
                 steps_row: np.ndarray) -> None:
    lo, hi = wear
    n_wear = hi - lo
    if n_wear <= 0 or steps_total <= 0:
        return
    n_mvpa = min(int(steps_total * mvpa_share / 115.0), n_wear // 4)
    mvpa_steps = rng.integers(MVPA_STEP_RATE, 131, size=n_mvpa)
    remaining = steps_total - int(mvpa_steps.sum())
    if remaining < 0:
        # trim bouts until the day's total fits
        cum = np.cumsum(mvpa_steps)
        n_mvpa = int(np.searchsorted(cum, steps_total, side="right"))
        mvpa_steps = mvpa_steps[:n_mvpa]
        remaining = steps_total - int(mvpa_steps.sum())
    n_light = min(max(1, int(round(remaining / 20.0))), int(0.7 * (n_wear - n_mvpa)))
    slots = rng.permutation(n_wear)[: n_mvpa + n_light] + lo
    # mvpa bouts sit in contiguous runs where possible
    if n_mvpa:
        bout_start = int(rng.integers(lo, max(lo + 1, hi - n_mvpa)))
        mvpa_idx = np.arange(bout_start, bout_start + n_mvpa)
        steps_row[mvpa_idx] = mvpa_steps
        free = np.setdiff1d(slots, mvpa_idx, assume_unique=True)
        if len(free) < n_light:
            pool = np.setdiff1d(np.arange(lo, hi), mvpa_idx, assume_unique=True)
            free = rng.permutation(pool)[:n_light]
        light_idx = free[:n_light]
    else:
        light_idx = slots[:n_light]
    if remaining > 0 and len(light_idx):
        steps_row[light_idx] += rng.multinomial(remaining, np.full(len(light_idx), 1.0 / len(light_idx)))


def _place_sessions(rng, total_minutes: float, n_sessions: int, fg_row: np.ndarray,
                    opens_row: np.ndarray) -> None:
    if n_sessions <= 0 or total_minutes <= 0:
        return
    shares = rng.dirichlet(np.ones(n_sessions))
    starts = np.sort(rng.integers(7 * 60, 23 * 60, size=n_sessions))
    for start, dur in zip(starts, shares * total_minutes):
        opens_row[start] += 1
        full = int(dur)
        end = min(start + full, MINUTES_PER_DAY)
        fg_row[start:end] = 1.0
        if end < MINUTES_PER_DAY and dur - full > 0:
            fg_row[end] = min(1.0, fg_row[end] + (dur - full))


def _generate_user(spec: CohortSpec, user_id: str, seed_seq: np.random.SeedSequence,
                   invalid: bool, level: float, L: int) -> tuple[UserMinutes, dict]:
    rng = np.random.default_rng(seed_seq)
    offset = int(rng.integers(0, spec.n_days - L + 1))
    dates = START_DATE + offset + np.arange(L)
    um = UserMinutes.empty(user_id, dates)

    # log weekly profile; re-drawn each Monday as an AR(1) across weeks
    profile = rng.standard_normal(7)
    first_profile = profile.copy()
    rho_w = spec.weekly_persistence
    adherence = spec.adherence_log_mean + spec.adherence_sigma * rng.standard_normal()
    mvpa_share = float(rng.uniform(0.1, 0.35))
    wear_mu = spec.on_wear_mean_hours * 60
    wear_sd = spec.wear_std_hours * 60
    dow_mult = np.asarray(spec.dow_multipliers, dtype=float)
    drift_sd = spec.drift_sigma / math.sqrt(1 - spec.drift_rho**2)

    drift = drift_sd * rng.standard_normal()
    regime = spec.regime_sigma * rng.standard_normal()
    prev_z = None
    dows = (dates.astype(np.int64) + 3) % 7
    for k in range(L):
        dow = int(dows[k])
        if dow == 0 and k > 0:
            profile = rho_w * profile + math.sqrt(1 - rho_w**2) * rng.standard_normal(7)
            if rng.random() < spec.regime_switch_prob:
                regime = spec.regime_sigma * rng.standard_normal()
        weekly = np.exp(spec.weekly_sigma * (profile - profile.mean()))
        drift = spec.drift_rho * drift + spec.drift_sigma * rng.standard_normal()
        noise = spec.step_noise_sigma * rng.standard_normal() - spec.step_noise_sigma**2 / 2
        coupling = 1.0 if prev_z is None else max(1.0 + spec.beta * math.tanh(prev_z), 0.05)
        log_bias = (drift_sd**2 + spec.regime_sigma**2) / 2
        steps = level * dow_mult[dow] * weekly[dow] * math.exp(drift + regime - log_bias + noise) * coupling

        if rng.random() < spec.nonwear_day_prob:
            wear_minutes = int(rng.uniform(0.5, 6.0) * 60)
        else:
            wear_minutes = int(np.clip(rng.normal(wear_mu, wear_sd), 60, 1410))
        # steps accrue only while worn; short days capture a proportional share
        steps *= min(1.0, wear_minutes / 600.0)
        wear = _place_wear(rng, wear_minutes)
        _place_steps(rng, int(round(steps)), wear, mvpa_share, um.steps[k])
        lo, hi = wear
        row = um.steps[k]
        code = np.full(MINUTES_PER_DAY, Intensity.NONWEAR, dtype=np.int8)
        code[lo:hi] = np.where(row[lo:hi] >= MVPA_STEP_RATE, Intensity.MVPA,
                               np.where(row[lo:hi] > 0, Intensity.LIGHT, Intensity.SEDENTARY))
        um.intensity[k] = code

        log_use = adherence + spec.daily_use_sigma * rng.standard_normal()
        use = math.exp(log_use)
        n_sessions = 1 + int(rng.poisson(use / spec.mean_session_minutes))
        _place_sessions(rng, use, n_sessions, um.foreground[k], um.opens[k])
        realized = float(um.foreground[k].sum())
        # standardized against the user's own typical use
        z = (math.log(realized + 1e-3) - adherence) / max(spec.daily_use_sigma, 1e-6)
        prev_z = float(np.clip(z, -3.0, 3.0))

    truth = {
        "user_id": user_id,
        "planted_invalid": int(invalid),
        "participation_days": L,
        "first_date": str(dates[0]),
        "step_level": level,
        "log_adherence": adherence,
        "mvpa_share": mvpa_share,
        **{f"weekly_{d}": float(np.exp(spec.weekly_sigma * (first_profile[d] - first_profile.mean())))
           for d in range(7)},
    }
    return um, truth


def generate_cohort(spec: CohortSpec) -> SyntheticCohort:
    """Generate a cohort deterministically from ``spec`` (including its seed)."""
    root = np.random.SeedSequence(spec.seed)
    plan_seq, *user_seqs = root.spawn(spec.n_users + 1)
    plan = np.random.default_rng(plan_seq)
    invalid = np.zeros(spec.n_users, dtype=bool)
    invalid[plan.choice(spec.n_users, size=spec.n_invalid_users, replace=False)] = True
    lengths = np.array([_participation_days(spec, plan, bool(bad)) for bad in invalid])
    # rescale levels so the day-weighted mean over retained users hits the target
    levels = np.exp(spec.level_sigma * plan.standard_normal(spec.n_users))
    keep = ~invalid if (~invalid).any() else np.ones(spec.n_users, dtype=bool)
    levels *= spec.mean_steps / np.average(levels[keep], weights=lengths[keep])
    width = max(3, len(str(spec.n_users)))
    minutes, truth = {}, []
    for i in range(spec.n_users):
        uid = f"u{i + 1:0{width}d}"
        um, row = _generate_user(spec, uid, user_seqs[i], bool(invalid[i]), float(levels[i]),
                                  int(lengths[i]))
        minutes[uid] = um
        truth.append(row)
    gt = pd.DataFrame(truth)
    gt.insert(1, "beta", spec.beta)
    return SyntheticCohort(spec=spec, minutes=minutes, ground_truth=gt)


def lagged_engagement_correlation(daily: dict[str, list[DailyFeatures]]) -> float:
    """Within-user Pearson r between minutes_used on day t and steps on day t + 1.

    Only calendar-consecutive pairs count. Each user's pairs are centred on
    that user's own means before pooling, so stable between-user differences
    in app use or step level do not enter the estimate.
    """
    xs, ys = [], []
    for days in daily.values():
        pairs = [(a.minutes_used, b.steps) for a, b in zip(days, days[1:])
                 if (b.date - a.date).days == 1]
        if len(pairs) < 2:
            continue
        arr = np.asarray(pairs)
        arr -= arr.mean(axis=0)
        xs.append(arr[:, 0])
        ys.append(arr[:, 1])
    if not xs:
        raise ValueError("not enough consecutive day pairs")
    x, y = np.concatenate(xs), np.concatenate(ys)
    denom = math.sqrt(float(x @ x) * float(y @ y))
    return float(x @ y) / denom if denom > 0 else 0.0
