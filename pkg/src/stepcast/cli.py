"""Command-line entry point: ``stepcast synth | run | predict | report``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from stepcast import checkpoint, ingest, synth
from stepcast.autodiff.tensor import ShapeError
from stepcast.dataset import ConfigurationError, SplitError, WindowSet
from stepcast.experiments import STAGES, ExperimentSettings
from stepcast.forecasters.model import ModalityError
from stepcast.reports import load_raw_reports

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"invalid TOML in {path}: {exc}") from None


_SPEC_KEYS = set(synth.CohortSpec.__dataclass_fields__) - {"seed"}
_SETTING_KEYS = set(ExperimentSettings.__dataclass_fields__) - {"dataset", "seed", "model", "jobs"}


def _cohort_spec(data: dict, seed: int) -> synth.CohortSpec:
    preset = data.get("preset", "prediabetes")
    if preset not in synth.PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from {sorted(synth.PRESETS)}")
    overrides = {k: v for k, v in data.items() if k in _SPEC_KEYS}
    if "dow_multipliers" in overrides:
        overrides["dow_multipliers"] = tuple(overrides["dow_multipliers"])
    try:
        return synth.PRESETS[preset](seed=seed).replace(**overrides)
    except synth.SpecError as exc:
        raise UsageError(str(exc)) from None


# synth ------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    data = dict(cfg.get("data", {}))
    if args.preset:
        data["preset"] = args.preset
    for flag, key in (("users", "n_users"), ("days", "n_days"), ("beta", "beta")):
        if getattr(args, flag) is not None:
            data[key] = getattr(args, flag)
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise UsageError("a seed is required (--seed or 'seed' in the config)")
    spec = _cohort_spec(data, int(seed))
    out = Path(args.out or cfg.get("out", "synth_out"))
    try:
        paths = synth.generate_cohort(spec).write(out)
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc}") from None
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


# run --------------------------------------------------------------------

def _load_days(data: dict, seed: int, progress) -> tuple[dict, dict]:
    if "activity" in data or "engagement" in data:
        if not ("activity" in data and "engagement" in data):
            raise UsageError("CSV input needs both data.activity and data.engagement")
        progress("ingest CSV streams")
        days = ingest.load_cohort(data["activity"], data["engagement"])
        info = {"source": "csv", "activity": str(data["activity"]), "engagement": str(data["engagement"]),
                "name": data.get("name", "custom")}
        return days, info
    spec = _cohort_spec(data, seed)
    progress(f"synthesize {data.get('preset', 'prediabetes')} cohort")
    cohort = synth.generate_cohort(spec)
    days = ingest.preprocess(cohort.daily())
    info = {"source": "synthetic", "preset": data.get("preset", "prediabetes"),
            "name": data.get("name", data.get("preset", "prediabetes")),
            "spec": {k: (list(v) if isinstance(v, tuple) else v) for k, v in spec.__dict__.items()}}
    return days, info


def build_settings(cfg: dict, seed: int, dataset: str, jobs: int | None) -> ExperimentSettings:
    exp = dict(cfg.get("experiment", {}))
    unknown = set(exp) - _SETTING_KEYS
    if unknown:
        raise UsageError(f"unknown [experiment] keys: {sorted(unknown)}")
    try:
        return ExperimentSettings(dataset=dataset, seed=seed, model=dict(cfg.get("model", {})),
                                  jobs=int(jobs if jobs is not None else cfg.get("jobs", 1)), **exp)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid experiment settings: {exc}") from None


def cmd_run(args) -> int:
    from stepcast.pipeline import run_pipeline

    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise UsageError("a seed is required (--seed or 'seed' in the config)")
    data = dict(cfg.get("data", {}))
    if args.preset:
        data = {k: v for k, v in data.items() if k not in ("activity", "engagement")}
        data["preset"] = args.preset
    stages = cfg.get("stages", list(STAGES))
    if args.stages:
        stages = [s.strip() for s in args.stages.split(",") if s.strip()]
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise UsageError(f"unknown stages {bad}; choose from {', '.join(STAGES)}")
    out = Path(args.out or cfg.get("out", "results"))
    progress = (lambda msg: print(msg, file=sys.stderr)) if not args.quiet else None
    days, info = _load_days(data, int(seed), progress or (lambda m: None))
    settings = build_settings(cfg, int(seed), info["name"], args.jobs)
    try:
        from stepcast.forecasters import ModelConfig
        ModelConfig(**settings.model)
    except (TypeError, ConfigurationError) as exc:
        raise UsageError(f"invalid [model] keys: {exc}") from None
    manifest = run_pipeline(days, settings, out, stages, data_info=info, progress=progress)
    failed = {k: v for k, v in manifest["stages"].items() if v["status"] == "error"}
    for name, v in failed.items():
        print(f"stage {name} failed: {v['error']}", file=sys.stderr)
    print(f"reports written to {out} (window {manifest['selected_window']['window']})")
    if failed:
        numerical = any(v["exit_class"] == "numerical" for v in failed.values())
        return EXIT_NUMERICAL if numerical else EXIT_DATA
    return EXIT_OK


# predict ----------------------------------------------------------------

def read_window_csv(path, w_expected: int | None = None) -> WindowSet:
    """A window CSV has one row per day and a header of feature names."""
    try:
        df = pd.read_csv(path)
    except (FileNotFoundError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ingest.ParseError(f"cannot read window file: {exc}", str(path)) from None
    n = len(df)
    u = np.full((n, ingest.N_ENGAGEMENT), np.nan)
    v = np.full((n, ingest.N_ACTIVITY), np.nan)
    have_u = set(ingest.ENGAGEMENT_FEATURES) <= set(df.columns)
    have_v = set(ingest.ACTIVITY_FEATURES) <= set(df.columns)
    if not (have_u or have_v):
        raise ingest.SchemaError("window file has neither the engagement nor the activity feature columns",
                                 str(path), 1)
    if have_u:
        u = df[ingest.ENGAGEMENT_FEATURES].to_numpy(dtype=np.float64)
    if have_v:
        v = df[ingest.ACTIVITY_FEATURES].to_numpy(dtype=np.float64)
    uid = str(df["user_id"].iloc[0]) if "user_id" in df.columns and n else "unknown"
    return WindowSet(user_ids=np.array([uid], dtype=object),
                     target_dates=np.array([np.datetime64("NaT", "D")]),
                     u=u[None], v=v[None], targets={})


def cmd_predict(args) -> int:
    model = checkpoint.load(args.checkpoint)
    ws = read_window_csv(args.window)
    value = float(model.predict_set(ws)[0])
    cfg = model.config
    out = {"architecture": cfg.architecture, "window": cfg.window, "head": cfg.head,
           "outcome": cfg.outcome}
    if cfg.head == "classification":
        out["threshold"] = cfg.threshold
        out["probability"] = value
    else:
        out["forecast"] = value
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


# report -----------------------------------------------------------------

def cmd_report(args) -> int:
    out = Path(args.out or "results")
    reports = load_raw_reports(out)
    for rep in reports:
        rep.write(out)
        if not args.quiet:
            print(rep.to_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stepcast", description="Next-day activity forecasting experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic cohort as CSV streams")
    s.add_argument("--config")
    s.add_argument("--preset", choices=sorted(synth.PRESETS))
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--users", type=int)
    s.add_argument("--days", type=int)
    s.add_argument("--beta", type=float)
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("run", help="run the experiment stages and write reports")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)}")
    r.add_argument("--preset", choices=sorted(synth.PRESETS))
    r.add_argument("--jobs", type=int)
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("predict", help="forecast from a checkpoint and one input window")
    f.add_argument("checkpoint")
    f.add_argument("window", help="CSV with one row per day and feature-name columns")
    f.set_defaults(func=cmd_predict)

    t = sub.add_parser("report", help="re-render report tables from stored raw results")
    t.add_argument("--out")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"stepcast: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"stepcast: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ingest.IngestError, checkpoint.CheckpointError, ShapeError, ModalityError, SplitError,
            ConfigurationError, FileNotFoundError, KeyError) as exc:
        print(f"stepcast: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
