"""End-to-end experiment run: data -> seven report stages -> checkpoints and manifest."""

from __future__ import annotations

import hashlib
import json
import traceback
from pathlib import Path
from typing import Callable, Mapping, Sequence

from stepcast import __version__, checkpoint, kernels
from stepcast.experiments import STAGES, ExperimentRunner, ExperimentSettings
from stepcast.ingest import DailyFeatures

DEFAULT_WINDOW = 7


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(days: Mapping[str, Sequence[DailyFeatures]], settings: ExperimentSettings, out_dir,
                 stages: Sequence[str] = STAGES, data_info: dict | None = None,
                 progress: Callable[[str], None] | None = None, save_checkpoints: bool = True) -> dict:
    """Run the requested stages in protocol order and write reports plus ``manifest.json``.

    A failing stage is recorded in the manifest and later stages still run;
    stages that need a window size fall back to ``DEFAULT_WINDOW`` when the
    sweep did not run or failed.
    """
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ValueError(f"unknown stages {unknown}; choose from {list(STAGES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    say = progress or (lambda msg: None)
    runner = ExperimentRunner(days, settings, progress=say)
    manifest = {
        "package_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "seed": settings.seed,
        "settings": settings.to_dict(),
        "data": dict(data_info or {}),
        "split": {k: sorted(getattr(runner.split, f"{k}_users")) for k in ("train", "val", "test")},
        "stages": {},
        "reports": {},
        "checkpoints": {},
    }
    manifest["data"].update({"n_users": len(runner.days),
                             "n_valid_days": sum(len(d) for d in runner.days.values())})
    window = DEFAULT_WINDOW
    window_source = "default"
    maes = None
    reports = []

    def stage(name, fn):
        if name not in stages:
            manifest["stages"][name] = {"status": "skipped"}
            return None
        say(f"stage {name}")
        try:
            result = fn()
        except Exception as exc:  # recorded, later stages continue
            manifest["stages"][name] = {
                "status": "error", "error": f"{type(exc).__name__}: {exc}",
                "exit_class": "numerical" if isinstance(exc, FloatingPointError) else "data",
                "trace": traceback.format_exception_only(type(exc), exc)[-1].strip(),
            }
            return None
        manifest["stages"][name] = {"status": "ok"}
        return result

    res = stage("sweep", runner.window_sweep)
    if res is not None:
        reports.append(res[0])
        window, window_source = res[1], "sweep"
    manifest["selected_window"] = {"window": window, "source": window_source}

    def baselines():
        rep, m = runner.baselines(window)
        reports.append(rep)
        return m

    maes = stage("baselines", baselines)

    def margins():
        m = maes if maes is not None else runner.baselines(window)[1]
        reports.append(runner.margins(m))

    stage("margins", margins)
    for name, fn in (("classification", runner.classification), ("cohorts", runner.cohorts),
                     ("per_user", runner.per_user), ("outcomes", runner.outcomes)):
        rep = stage(name, lambda fn=fn: fn(window))
        if rep is not None:
            reports.append(rep)

    for rep in reports:
        paths = rep.write(out)
        manifest["reports"][paths["csv"].name] = _sha256(paths["csv"])
        manifest["reports"][paths["txt"].name] = _sha256(paths["txt"])
    if save_checkpoints:
        for name, model in runner.trained_models().items():
            manifest["checkpoints"][name] = checkpoint.save(model, out / "checkpoints" / f"{name}.json")
    leaked = sum(len(set(a["fit_users"]) & set(a["test_users"])) for a in runner.audit)
    manifest["audit"] = {"fits": len(runner.audit), "test_users_in_fitting_sets": leaked}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest
