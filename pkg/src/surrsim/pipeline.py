"""Stage orchestration: calibrate -> simulate -> metrics -> meta -> report.

Each stage reads the previous stage's CSVs from the output directory,
writes its own, and records itself in manifest.json.  The manifest pins
(version, scenario, profile, seed, week convention); a stage refuses to run
into a directory whose manifest disagrees, so outputs from different runs
can never mix.  Stages are pure over (manifest, inputs): rerunning one
regenerates byte-identical files, and worker-pool parallelism never changes
output bytes because results are sorted by task key before writing.
"""

from __future__ import annotations

import json
import sys
from multiprocessing import get_context
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .meta import assemble_pairs, correlation_report, trial_effects
from .metrics import UnusableTrialError, study_metrics
from . import report as report_mod
from .scenario import (
    MONTH_IN_WEEKS,
    Cell,
    Profile,
    ScenarioSpec,
    derive_stream,
    expand_cells,
)
from .survsim import Trial, calibrate_beta0, simulate_trial

MANIFEST_NAME = "manifest.json"

PATIENT_COLUMNS = [
    "scenario", "cell_index", "ks_mean_active", "kg_mean_active", "alpha",
    "beta1", "replicate", "id", "arm", "ks", "kg", "y_tstar", "time_weeks",
    "event", "beta0", "censor_time",
]

METRIC_COLUMNS = [
    "scenario", "alpha", "beta1", "ks_mean_active", "kg_mean_active",
    "replicate", "c_index", "ibs", "scaled_ibs", "log_hr_se",
    "excluded_count", "tau",
]


class StageError(RuntimeError):
    """A stage cannot run: missing inputs or a mismatched output directory."""


def _run_key(spec: ScenarioSpec, profile: Profile, seed: int) -> dict:
    return {
        "version": __version__,
        "scenario": spec.name,
        "profile": profile.name,
        "master_seed": int(seed),
        "month_in_weeks": MONTH_IN_WEEKS,
    }


def load_manifest(outdir: Path) -> dict | None:
    path = Path(outdir) / MANIFEST_NAME
    if not path.exists():
        return None
    return json.loads(path.read_text())


def _open_manifest(outdir: Path, spec: ScenarioSpec, profile: Profile, seed: int) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(outdir)
    key = _run_key(spec, profile, seed)
    if manifest is None:
        return {**key, "scenario_spec": spec.to_dict(), "stages": {}}
    for field, value in key.items():
        if manifest.get(field) != value:
            raise StageError(
                f"{outdir / MANIFEST_NAME}: {field} is {manifest.get(field)!r} "
                f"but this run wants {value!r}; refusing to mix outputs"
            )
    return manifest


def _write_manifest(outdir: Path, manifest: dict):
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (Path(outdir) / MANIFEST_NAME).write_text(text)


def _require(outdir: Path, filename: str, needed_by: str) -> Path:
    path = Path(outdir) / filename
    if not path.exists():
        raise StageError(
            f"{path} is missing; run the stage that produces it before `{needed_by}`"
        )
    return path


def _write_csv(frame: pd.DataFrame, path: Path):
    frame.to_csv(path, index=False)


def _progress(stage: str, done: int, total: int):
    step = max(1, total // 10)
    if done % step == 0 or done == total:
        print(f"{stage}: {done}/{total}", file=sys.stderr)


def _map_tasks(fn, tasks, threads: int, stage: str, chunksize: int = 8):
    """Run fn over tasks, optionally in a worker pool; order-stable output."""
    results = []
    total = len(tasks)
    if threads <= 1:
        for i, task in enumerate(tasks, 1):
            results.append(fn(task))
            _progress(stage, i, total)
    else:
        ctx = get_context("fork")
        with ctx.Pool(processes=threads) as pool:
            for i, res in enumerate(pool.imap_unordered(fn, tasks, chunksize), 1):
                results.append(res)
                _progress(stage, i, total)
    return results


# Worker state is process-global so the pool pickles each task, not the
# scenario; initialized once per worker by the pool initializer.
_W: dict = {}


def _init_worker(spec_dict: dict, seed: int, beta0: dict | None):
    spec = ScenarioSpec(**spec_dict)
    _W["spec"] = spec
    _W["cells"] = expand_cells(spec)
    _W["seed"] = seed
    _W["beta0"] = beta0


def _calibrate_task(cell_index: int):
    spec = _W["spec"]
    cell = _W["cells"][cell_index]
    stream = derive_stream(_W["seed"], cell_index, 0, purpose="calibrate")
    res = calibrate_beta0(cell, spec, stream)
    return cell_index, res


def _map_cell_tasks(fn, tasks, threads, stage, spec, seed, beta0=None, chunksize=1):
    if threads <= 1:
        _init_worker(spec.to_dict(), seed, beta0)
        return _map_tasks(fn, tasks, 1, stage)
    ctx = get_context("fork")
    results = []
    total = len(tasks)
    with ctx.Pool(
        processes=threads,
        initializer=_init_worker,
        initargs=(spec.to_dict(), seed, beta0),
    ) as pool:
        for i, res in enumerate(pool.imap_unordered(fn, tasks, chunksize), 1):
            results.append(res)
            _progress(stage, i, total)
    return results


def stage_calibrate(outdir, spec: ScenarioSpec, profile: Profile, seed: int, threads: int):
    """Solve beta0 per cell; writes calibration.csv."""
    outdir = Path(outdir)
    manifest = _open_manifest(outdir, spec, profile, seed)
    cells = expand_cells(spec)
    results = _map_cell_tasks(
        _calibrate_task, list(range(len(cells))), threads, "calibrate", spec, seed
    )
    results.sort(key=lambda r: r[0])
    rows = []
    for cell_index, res in results:
        cell = cells[cell_index]
        rows.append(
            {
                "scenario": cell.scenario,
                "cell_index": cell.index,
                "ks_mean_active": cell.ks_mean_active,
                "kg_mean_active": cell.kg_mean_active,
                "alpha": cell.alpha,
                "beta1": cell.beta1,
                "beta0": res.beta0,
                "early_fraction": res.early_fraction,
                "event_fraction": res.event_fraction,
                "relaxed": int(res.relaxed),
                "pilot_size": res.pilot_size,
            }
        )
    frame = pd.DataFrame(rows)
    _write_csv(frame, outdir / "calibration.csv")
    n_relaxed = int(frame["relaxed"].sum())
    if n_relaxed:
        print(
            f"calibrate: {n_relaxed} cells relaxed the early-event target "
            f"to reach the event-fraction goal",
            file=sys.stderr,
        )
    manifest["stages"]["calibrate"] = {
        "files": ["calibration.csv"],
        "cells": len(cells),
        "relaxed_cells": n_relaxed,
    }
    _write_manifest(outdir, manifest)
    return frame


def _simulate_task(task):
    cell_index, replicate = task
    spec = _W["spec"]
    cell = _W["cells"][cell_index]
    stream = derive_stream(_W["seed"], cell_index, replicate, purpose="simulate")
    trial = simulate_trial(cell, spec, _W["beta0"][cell_index], replicate, stream)
    return cell_index, replicate, trial.censor_time, trial.arm, trial.ks, trial.kg, \
        trial.y_observed, trial.time_weeks, trial.event


def stage_simulate(outdir, spec: ScenarioSpec, profile: Profile, seed: int, threads: int):
    """Simulate every (cell, replicate) trial; writes patients.csv."""
    outdir = Path(outdir)
    manifest = _open_manifest(outdir, spec, profile, seed)
    cal_path = _require(outdir, "calibration.csv", "simulate")
    cal = pd.read_csv(cal_path).sort_values("cell_index")
    beta0 = dict(zip(cal["cell_index"].astype(int), cal["beta0"].astype(float)))
    cells = expand_cells(spec)
    if set(beta0) != set(range(len(cells))):
        raise StageError("calibration.csv does not cover the scenario's cells")

    tasks = [(c.index, r) for c in cells for r in range(spec.n_replicates)]
    results = _map_cell_tasks(
        _simulate_task, tasks, threads, "simulate", spec, seed, beta0, chunksize=8
    )
    results.sort(key=lambda r: (r[0], r[1]))

    n = 2 * spec.n_per_arm
    chunks = []
    for cell_index, replicate, censor_time, arm, ks, kg, y, tw, ev in results:
        cell = cells[cell_index]
        chunks.append(
            pd.DataFrame(
                {
                    "scenario": cell.scenario,
                    "cell_index": cell_index,
                    "ks_mean_active": cell.ks_mean_active,
                    "kg_mean_active": cell.kg_mean_active,
                    "alpha": cell.alpha,
                    "beta1": cell.beta1,
                    "replicate": replicate,
                    "id": np.arange(n),
                    "arm": arm.astype(int),
                    "ks": ks,
                    "kg": kg,
                    "y_tstar": y,
                    "time_weeks": tw,
                    "event": ev.astype(int),
                    "beta0": beta0[cell_index],
                    "censor_time": censor_time,
                }
            )
        )
    frame = pd.concat(chunks, ignore_index=True)[PATIENT_COLUMNS]
    _write_csv(frame, outdir / "patients.csv")
    manifest["stages"]["simulate"] = {
        "files": ["patients.csv"],
        "trials": len(results),
        "patients_per_trial": n,
    }
    _write_manifest(outdir, manifest)
    return frame


def _trial_from_group(spec: ScenarioSpec, group: dict) -> Trial:
    # Rebuild a Trial from patients.csv columns.  The latent y_true is not
    # persisted; downstream consumers only use the observed surrogate.
    cell = Cell(
        scenario=group["scenario"],
        index=int(group["cell_index"]),
        ks_mean_active=float(group["ks_mean_active"]),
        kg_mean_active=float(group["kg_mean_active"]),
        ks_mean_control=spec.ks_control,
        kg_mean_control=spec.kg_control,
        alpha=float(group["alpha"]),
        beta1=float(group["beta1"]),
    )
    return Trial(
        cell=cell,
        replicate=int(group["replicate"]),
        beta0=float(group["beta0"]),
        censor_time=float(group["censor_time"]),
        arm=group["arm"],
        ks=group["ks"],
        kg=group["kg"],
        y_true=np.full(len(group["arm"]), np.nan),
        y_observed=group["y_tstar"],
        time_weeks=group["time_weeks"],
        event=group["event"].astype(bool),
    )


def _metrics_task(group):
    spec = _W["spec"]
    trial = _trial_from_group(spec, group)
    key = (trial.cell.index, trial.replicate)
    try:
        sm = study_metrics(trial, spec.t_star)
    except UnusableTrialError as exc:
        return key, None, str(exc)
    return key, sm, None


def _effects_task(group):
    spec = _W["spec"]
    trial = _trial_from_group(spec, group)
    eff = trial_effects(trial, spec.t_star)
    return (trial.cell.index, trial.replicate), eff


def _patient_groups(patients: pd.DataFrame):
    """Split patients.csv into per-trial column dicts (cheap plain arrays)."""
    groups = []
    for (_, _), grp in patients.groupby(["cell_index", "replicate"], sort=True):
        groups.append(
            {
                "scenario": grp["scenario"].iloc[0],
                "cell_index": grp["cell_index"].iloc[0],
                "ks_mean_active": grp["ks_mean_active"].iloc[0],
                "kg_mean_active": grp["kg_mean_active"].iloc[0],
                "alpha": grp["alpha"].iloc[0],
                "beta1": grp["beta1"].iloc[0],
                "replicate": grp["replicate"].iloc[0],
                "beta0": grp["beta0"].iloc[0],
                "censor_time": grp["censor_time"].iloc[0],
                "arm": grp["arm"].to_numpy(),
                "ks": grp["ks"].to_numpy(),
                "kg": grp["kg"].to_numpy(),
                "y_tstar": grp["y_tstar"].to_numpy(),
                "time_weeks": grp["time_weeks"].to_numpy(),
                "event": grp["event"].to_numpy(),
            }
        )
    return groups


def stage_metrics(outdir, spec: ScenarioSpec, profile: Profile, seed: int, threads: int):
    """Patient-level metrics per trial; writes metrics.csv."""
    outdir = Path(outdir)
    manifest = _open_manifest(outdir, spec, profile, seed)
    patients = pd.read_csv(_require(outdir, "patients.csv", "metrics"))
    groups = _patient_groups(patients)
    results = _map_cell_tasks(
        _metrics_task, groups, threads, "metrics", spec, seed, chunksize=16
    )
    results.sort(key=lambda r: r[0])
    rows = []
    unusable = 0
    for (cell_index, replicate), sm, _err in results:
        if sm is None:
            unusable += 1
            continue
        rows.append((cell_index, replicate, sm))
    cells = {c.index: c for c in expand_cells(spec)}
    frame = pd.DataFrame(
        {
            "scenario": [cells[ci].scenario for ci, _, _ in rows],
            "alpha": [cells[ci].alpha for ci, _, _ in rows],
            "beta1": [cells[ci].beta1 for ci, _, _ in rows],
            "ks_mean_active": [cells[ci].ks_mean_active for ci, _, _ in rows],
            "kg_mean_active": [cells[ci].kg_mean_active for ci, _, _ in rows],
            "replicate": [r for _, r, _ in rows],
            "c_index": [sm.c_index for _, _, sm in rows],
            "ibs": [sm.ibs for _, _, sm in rows],
            "scaled_ibs": [sm.scaled_ibs for _, _, sm in rows],
            "log_hr_se": [sm.log_hr_se for _, _, sm in rows],
            "excluded_count": [sm.excluded_count for _, _, sm in rows],
            "tau": [sm.tau for _, _, sm in rows],
        }
    )[METRIC_COLUMNS]
    _write_csv(frame, outdir / "metrics.csv")
    if unusable:
        print(f"metrics: {unusable} unusable trials skipped", file=sys.stderr)
    manifest["stages"]["metrics"] = {
        "files": ["metrics.csv"],
        "trials": len(rows),
        "unusable_trials": unusable,
    }
    _write_manifest(outdir, manifest)
    return frame


def _meta_tag(mode: str, dups: int) -> str:
    return "mixed" if mode == "mixed_beta1" else f"fixed_dups{dups}"


def stage_meta(outdir, spec: ScenarioSpec, profile: Profile, seed: int, threads: int,
               mode: str = "fixed_beta1", dups: int = 3):
    """Trial effects, meta-analysis pairs and Spearman report for one mode."""
    outdir = Path(outdir)
    manifest = _open_manifest(outdir, spec, profile, seed)
    metrics = pd.read_csv(_require(outdir, "metrics.csv", "meta"))

    effects_path = outdir / "effects.csv"
    if effects_path.exists() and "effects" in manifest["stages"]:
        effects = pd.read_csv(effects_path)
    else:
        patients = pd.read_csv(_require(outdir, "patients.csv", "meta"))
        groups = _patient_groups(patients)
        results = _map_cell_tasks(
            _effects_task, groups, threads, "effects", spec, seed, chunksize=16
        )
        results.sort(key=lambda r: r[0])
        cells = {c.index: c for c in expand_cells(spec)}
        effects = pd.DataFrame(
            {
                "scenario": [cells[ci].scenario for (ci, _), _ in results],
                "alpha": [cells[ci].alpha for (ci, _), _ in results],
                "beta1": [cells[ci].beta1 for (ci, _), _ in results],
                "ks_mean_active": [cells[ci].ks_mean_active for (ci, _), _ in results],
                "kg_mean_active": [cells[ci].kg_mean_active for (ci, _), _ in results],
                "replicate": [r for (_, r), _ in results],
                "log_hr_os": [e.log_hr_os for _, e in results],
                "delta_median_se": [e.delta_median_se for _, e in results],
            }
        )
        _write_csv(effects, effects_path)
        manifest["stages"]["effects"] = {"files": ["effects.csv"], "trials": len(effects)}
        _write_manifest(outdir, manifest)

    join_keys = ["scenario", "alpha", "beta1", "ks_mean_active", "kg_mean_active", "replicate"]
    pool = effects.merge(metrics, on=join_keys, how="inner")
    pool["mean_active"] = pool[
        "ks_mean_active" if spec.kind == "ks" else "kg_mean_active"
    ]

    mode_code = 0 if mode == "fixed_beta1" else 1
    stream = derive_stream(seed, mode_code, dups, purpose="pairs")
    pairs = assemble_pairs(pool, mode, dups, profile.n_pairs, stream)

    tag = _meta_tag(mode, dups)
    pairs_frame = pd.DataFrame(
        {
            "scenario": spec.name,
            "mode": mode,
            "alpha": [p.stratum[0] for p in pairs],
            "beta1_or_mixed": [p.stratum[1] for p in pairs],
            "pair_id": [p.pair_id for p in pairs],
            "r2": [p.r2 for p in pairs],
            "c_index": [p.discovery.c_index for p in pairs],
            "ibs": [p.discovery.ibs for p in pairs],
            "scaled_ibs": [p.discovery.scaled_ibs for p in pairs],
            "log_hr_se": [p.discovery.log_hr_se for p in pairs],
        }
    )
    _write_csv(pairs_frame, outdir / f"pairs_{tag}.csv")
    corr = correlation_report(pairs_frame)
    _write_csv(corr, outdir / f"correlations_{tag}.csv")
    manifest["stages"][f"meta_{tag}"] = {
        "files": [f"pairs_{tag}.csv", f"correlations_{tag}.csv"],
        "mode": mode,
        "dups": dups,
        "n_pairs": profile.n_pairs,
    }
    _write_manifest(outdir, manifest)
    return pairs_frame, corr


def stage_report(outdir, spec: ScenarioSpec, profile: Profile, seed: int, threads: int):
    """Aggregate CSVs into summary tables, SVG figures and a pattern digest."""
    outdir = Path(outdir)
    manifest = _open_manifest(outdir, spec, profile, seed)
    metrics = pd.read_csv(_require(outdir, "metrics.csv", "report"))

    summary_metrics = report_mod.metric_boxplots(metrics, outdir)
    _write_csv(summary_metrics, outdir / "summary_metrics.csv")
    detail, quartiles = report_mod.within_cell_correlations(metrics)
    _write_csv(detail, outdir / "summary_within_cell.csv")
    _write_csv(quartiles, outdir / "summary_within_cell_quartiles.csv")

    files = [
        "summary_metrics.csv",
        "summary_within_cell.csv",
        "summary_within_cell_quartiles.csv",
    ] + [f"fig_{m}.svg" for m in ("c_index", "ibs", "scaled_ibs", "log_hr_se")]

    summary_r2_main = None
    corr_main = None
    for pairs_path in sorted(outdir.glob("pairs_*.csv")):
        tag = pairs_path.stem.removeprefix("pairs_")
        pairs = pd.read_csv(pairs_path)
        summary_r2 = report_mod.r2_summaries(pairs, outdir, tag)
        _write_csv(summary_r2, outdir / f"summary_r2_{tag}.csv")
        files += [f"summary_r2_{tag}.csv", f"fig_r2_{tag}.svg"]
        if tag == "fixed_dups3" or summary_r2_main is None:
            summary_r2_main = summary_r2
            corr_path = outdir / f"correlations_{tag}.csv"
            corr_main = pd.read_csv(corr_path) if corr_path.exists() else None

    lines = report_mod.pattern_summary(summary_metrics, summary_r2_main, corr_main)
    (outdir / "patterns.txt").write_text("\n".join(lines) + "\n" if lines else "")
    files.append("patterns.txt")

    manifest["stages"]["report"] = {"files": sorted(set(files))}
    _write_manifest(outdir, manifest)
    return lines


def run_all(outdir, spec: ScenarioSpec, profile: Profile, seed: int, threads: int,
            mode: str = "fixed_beta1", dups: int = 3):
    stage_calibrate(outdir, spec, profile, seed, threads)
    stage_simulate(outdir, spec, profile, seed, threads)
    stage_metrics(outdir, spec, profile, seed, threads)
    stage_meta(outdir, spec, profile, seed, threads, mode=mode, dups=dups)
    lines = stage_report(outdir, spec, profile, seed, threads)
    return lines
