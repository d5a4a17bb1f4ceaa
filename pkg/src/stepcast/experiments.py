"""Experiment protocols: window sweep, baselines, goal classification, engagement
cohorts, per-user comparison and secondary outcomes."""

from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from stepcast import metrics as M
from stepcast.dataset import (
    WindowSet,
    build_window_set,
    goal_labels,
    select_engaged_cohort,
    split_participants,
    SplitAssignment,
)
from stepcast.forecasters import ModelConfig, TrainedForecaster, evaluate_arima_protocol, train
from stepcast.ingest import DailyFeatures
from stepcast.reports import Report

MODALITY_ARCH = {"multimodal": "lstm_early", "engagement": "lstm_engagement", "activity": "lstm_activity"}
BASELINE_COLUMNS = (
    "lstm_early", "lstm_late", "lstm_engagement", "lstm_activity",
    "linreg_multimodal", "linreg_engagement", "linreg_activity", "arima",
)
DEFAULT_THRESHOLDS = {"prediabetes": (6000.0, 8000.0), "sleep": (10000.0,)}
STAGES = ("sweep", "baselines", "margins", "classification", "cohorts", "per_user", "outcomes")


class LeakageError(RuntimeError):
    """Test-split participants reached a training or normalization step."""


@dataclass
class ExperimentSettings:
    dataset: str = "prediabetes"
    seed: int = 0
    windows: tuple = (3, 7, 14, 21)
    thresholds: tuple | None = None
    percentiles: tuple = (0, 25, 50, 75)
    outcomes: tuple = ("sed_minutes", "wear_time", "lpa_minutes")
    test_fraction: float = 0.2
    val_fraction: float = 0.1
    require_contiguous_days: bool = False
    select_by: str = "test"  # or "val"
    model: dict = field(default_factory=dict)  # ModelConfig overrides
    arima_order: tuple = (1, 1, 1)
    jobs: int = 1

    def __post_init__(self):
        self.windows = tuple(int(w) for w in self.windows)
        if not self.windows:
            raise ValueError("at least one window size is required")
        if self.thresholds is None:
            self.thresholds = DEFAULT_THRESHOLDS.get(self.dataset, (6000.0, 8000.0))
        self.thresholds = tuple(float(t) for t in self.thresholds)
        self.percentiles = tuple(self.percentiles)
        self.outcomes = tuple(self.outcomes)
        self.arima_order = tuple(int(k) for k in self.arima_order)
        if self.select_by not in ("test", "val"):
            raise ValueError("select_by must be 'test' or 'val'")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("windows", "thresholds", "percentiles", "outcomes", "arima_order"):
            d[k] = list(d[k])
        return d


def cell_seed(master: int, cell_id: str) -> int:
    """Per-cell seed derived from the master seed and a stable cell name."""
    return int(np.random.SeedSequence([int(master), zlib.crc32(cell_id.encode())]).generate_state(1)[0])


def _fit_task(args) -> TrainedForecaster:
    config, tr, va = args
    return train(config, tr, va)


@dataclass
class CellResult:
    model: TrainedForecaster
    test_mae: float
    val_mae: float | None
    predictions: np.ndarray
    actuals: np.ndarray
    user_ids: np.ndarray


class ExperimentRunner:
    """Holds a filtered cohort, its participant split and a cache of trained cells."""

    def __init__(self, days: Mapping[str, Sequence[DailyFeatures]], settings: ExperimentSettings,
                 progress: Callable[[str], None] | None = None):
        self.days = {u: list(d) for u, d in sorted(days.items())}
        self.settings = settings
        self.split = split_participants(self.days, settings.test_fraction, settings.val_fraction,
                                        settings.seed)
        self._windows: dict[int, WindowSet] = {}
        self._cells: dict[tuple, CellResult] = {}
        self.audit: list[dict] = []
        self.progress = progress or (lambda msg: None)

    # data ---------------------------------------------------------------

    def windows(self, w: int) -> WindowSet:
        if w not in self._windows:
            self._windows[w] = build_window_set(
                self.days, w, require_contiguous_days=self.settings.require_contiguous_days
            )
        return self._windows[w]

    def base_config(self, architecture: str, w: int, **changes) -> ModelConfig:
        cfg = ModelConfig(architecture=architecture, window=w, **self.settings.model)
        cfg = cfg.replace(**changes) if changes else cfg
        cell = f"{cfg.architecture}|w{cfg.window}|{cfg.outcome}|{cfg.head}|{cfg.threshold}"
        return cfg.replace(seed=cell_seed(self.settings.seed, cell))

    def _check_leak(self, split: SplitAssignment, *sets: WindowSet) -> None:
        for ws in sets:
            if ws is None:
                continue
            leaked = set(ws.user_ids.tolist()) & split.test_users
            if leaked:
                raise LeakageError(f"test participants in a fitting set: {sorted(leaked)[:5]}")
        self.audit.append({"fit_users": sorted({u for ws in sets if ws is not None for u in ws.user_ids}),
                           "test_users": sorted(split.test_users)})

    # cells --------------------------------------------------------------

    def cells(self, configs: Sequence[ModelConfig], split: SplitAssignment | None = None) -> list[CellResult]:
        """Train (or fetch cached) models for ``configs`` on ``split`` and score them on its test users."""
        split = split or self.split
        split_key = (tuple(sorted(split.train_users)), tuple(sorted(split.val_users)),
                     tuple(sorted(split.test_users)))
        pending = []
        for cfg in configs:
            key = (cfg, split_key)
            if key in self._cells:
                continue
            ws = self.windows(cfg.window)
            tr, va = ws.for_users(split.train_users), ws.for_users(split.val_users)
            if len(tr) == 0:
                raise ValueError(f"no training windows for w={cfg.window}")
            self._check_leak(split, tr, va)
            pending.append((key, (cfg, tr, va)))
        if pending:
            for (key, _), model in zip(pending, self._train_all([p[1] for p in pending])):
                cfg = key[0]
                ws = self.windows(cfg.window)
                self._cells[key] = self._score(model, ws.for_users(split.test_users),
                                               ws.for_users(split.val_users))
        return [self._cells[(cfg, split_key)] for cfg in configs]

    def _train_all(self, tasks):
        for cfg, _, _ in tasks:
            self.progress(f"train {cfg.architecture} w={cfg.window} {cfg.head} {cfg.outcome}")
        if self.settings.jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=self.settings.jobs) as pool:
                return list(pool.map(_fit_task, tasks))
        return [_fit_task(t) for t in tasks]

    def _score(self, model: TrainedForecaster, te: WindowSet, va: WindowSet) -> CellResult:
        cfg = model.config
        pred = model.predict_set(te)
        if cfg.head == "classification":
            actual = goal_labels(te.targets["steps"], cfg.threshold)
            return CellResult(model, float("nan"), None, pred, actual, te.user_ids)
        actual = te.targets[cfg.outcome]
        val_mae = M.mae(model.predict_set(va), va.targets[cfg.outcome]) if len(va) else None
        return CellResult(model, M.mae(pred, actual), val_mae, pred, actual, te.user_ids)

    # protocols ----------------------------------------------------------

    def window_sweep(self) -> tuple[Report, int]:
        """Test MAE for every window x modality; returns the report and the selected window."""
        s = self.settings
        mods = list(MODALITY_ARCH)
        configs = [self.base_config(MODALITY_ARCH[m], w) for w in s.windows for m in mods]
        results = self.cells(configs)
        grid = {(c.window, c.architecture): r for c, r in zip(configs, results)}
        key = (lambda r: r.test_mae) if s.select_by == "test" else (lambda r: r.val_mae)
        best_w, best_mod = min(((w, m) for w in s.windows for m in mods),
                               key=lambda wm: (key(grid[(wm[0], MODALITY_ARCH[wm[1]])]), wm[0]))
        cols = ["window"] + [f"{m}_mae" for m in mods] + [f"{m}_val_mae" for m in mods] + ["selected"]
        rows = []
        for w in s.windows:
            row = [w] + [grid[(w, MODALITY_ARCH[m])].test_mae for m in mods]
            row += [grid[(w, MODALITY_ARCH[m])].val_mae for m in mods]
            row.append(best_mod if w == best_w else "")
            rows.append(row)
        notes = [f"selected window {best_w} by {s.select_by} MAE ({best_mod})"]
        return Report("sweep", s.dataset, cols, rows, notes), best_w

    def _arima_errors(self, users) -> dict[str, np.ndarray]:
        series = {u: np.array([d.steps for d in self.days[u]]) for u in sorted(users)}
        return evaluate_arima_protocol(series, self.settings.arima_order)

    def baselines(self, w: int) -> tuple[Report, dict[str, float]]:
        """MAE of all eight model columns on the held-out participants."""
        archs = [a for a in BASELINE_COLUMNS if a != "arima"]
        results = self.cells([self.base_config(a, w) for a in archs])
        maes = {a: r.test_mae for a, r in zip(archs, results)}
        ms = {a: len(r.actuals) for a, r in zip(archs, results)}
        arima_err = self._arima_errors(self.split.test_users)
        pooled = np.concatenate(list(arima_err.values())) if arima_err else np.zeros(0)
        maes["arima"] = float(pooled.mean()) if pooled.size else float("nan")
        ms["arima"] = int(pooled.size)
        cols = ["metric"] + list(BASELINE_COLUMNS)
        rows = [["mae"] + [maes[a] for a in BASELINE_COLUMNS],
                ["test_examples"] + [ms[a] for a in BASELINE_COLUMNS]]
        notes = [f"window {w}; arima order {self.settings.arima_order} scored on the last 30% of each "
                 f"test participant's valid days ({len(arima_err)} participants)"]
        return Report("baselines", self.settings.dataset, cols, rows, notes), maes

    def margins(self, maes: Mapping[str, float], model: str = "lstm_early") -> Report:
        """Signed relative MAE difference of ``model`` against every other column."""
        others = [a for a in BASELINE_COLUMNS if a != model]
        cols = ["model", "baseline", "model_mae", "baseline_mae", "margin", "margin_pct"]
        rows = []
        for b in others:
            if not np.isfinite(maes[b]) or maes[b] == 0:
                rows.append([model, b, maes[model], maes[b], None, "n/a"])
                continue
            m = M.relative_margin(maes[model], maes[b])
            rows.append([model, b, maes[model], maes[b], m, M.format_margin(m)])
        return Report("margins", self.settings.dataset, cols, rows, ["negative margin = lower MAE"])

    def classification(self, w: int) -> Report:
        s = self.settings
        mods = list(MODALITY_ARCH)
        cols = ["threshold", "positive_rate"] + [f"{m}_{k}" for m in mods for k in ("accuracy", "f1")]
        rows = []
        for thr in s.thresholds:
            configs = [self.base_config(MODALITY_ARCH[m], w, head="classification", threshold=thr)
                       for m in mods]
            results = self.cells(configs)
            row = [thr, float(results[0].actuals.mean())]
            for r in results:
                acc, f1 = M.accuracy_f1((r.predictions > 0.5).astype(int), r.actuals.astype(int))
                row += [acc, f1]
            rows.append(row)
        return Report("classification", s.dataset, cols, rows, [f"window {w}; label = steps > threshold"])

    def cohorts(self, w: int) -> Report:
        s = self.settings
        mods = list(MODALITY_ARCH)
        cols = ["percentile", "n_users", "n_test_users"] + [f"{m}_mae" for m in mods]
        rows, notes = [], [f"window {w}; users ranked by mean daily app minutes"]
        for p in s.percentiles:
            users = select_engaged_cohort(self.days, p)
            try:
                split = split_participants(users, s.test_fraction, s.val_fraction, s.seed)
            except ValueError as exc:
                rows.append([p, len(users), 0] + [None] * len(mods))
                notes.append(f"percentile {p}: unavailable ({exc})")
                continue
            results = self.cells([self.base_config(MODALITY_ARCH[m], w) for m in mods], split)
            rows.append([p, len(users), len(split.test_users)] + [r.test_mae for r in results])
        return Report("cohorts", s.dataset, cols, rows, notes)

    def per_user(self, w: int) -> Report:
        early, late = self.cells([self.base_config("lstm_early", w), self.base_config("lstm_late", w)])
        re = M.MetricsReport.from_predictions("early", early.predictions, early.actuals, early.user_ids)
        rl = M.MetricsReport.from_predictions("late", late.predictions, late.actuals, late.user_ids)
        cols = ["user_id", "m_user", "early_fusion_mae", "late_fusion_mae", "lower"]
        rows = []
        for u in sorted(self.split.test_users):
            m_u, e = re.per_user.get(u, (0, float("nan")))
            _, l_ = rl.per_user.get(u, (0, float("nan")))
            lower = "early" if e < l_ else ("late" if l_ < e else "tie")
            rows.append([u, m_u, e, l_, lower])
        wins = sum(r[-1] == "early" for r in rows)
        notes = [f"window {w}; early fusion lower for {wins} of {len(rows)} test participants",
                 f"pooled early MAE {re.mae:.4f}, late MAE {rl.mae:.4f}"]
        return Report("per_user", self.settings.dataset, cols, rows, notes)

    def outcomes(self, w: int) -> Report:
        s = self.settings
        configs = [self.base_config("lstm_early", w, outcome=o) for o in s.outcomes]
        cols = ["outcome", "m", "mae", "rmse", "nrmse", "mean_actual"]
        rows = []
        for o, r in zip(s.outcomes, self.cells(configs)):
            rep = M.MetricsReport.from_predictions(o, r.predictions, r.actuals)
            rows.append([o, rep.m, rep.mae, rep.rmse, rep.nrmse, float(np.mean(r.actuals))])
        return Report("outcomes", s.dataset, cols, rows, [f"window {w}; early-fusion regression per outcome"])

    def trained_models(self) -> dict[str, TrainedForecaster]:
        """Models trained on the main split, keyed by a readable cell name."""
        main = (tuple(sorted(self.split.train_users)), tuple(sorted(self.split.val_users)),
                tuple(sorted(self.split.test_users)))
        out = {}
        for (cfg, split_key), res in self._cells.items():
            if split_key != main:
                continue
            name = f"{cfg.architecture}_w{cfg.window}_{cfg.outcome}"
            if cfg.head == "classification":
                name += f"_goal{int(cfg.threshold)}"
            out[name] = res.model
        return dict(sorted(out.items()))
