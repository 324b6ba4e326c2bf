"""Trial-level surrogacy: treatment effects, meta-analysis R², pairing.

Each simulated trial yields two treatment-effect estimates: the log hazard
ratio of treatment on survival (full population) and the difference of
median surrogate values between arms.  A meta-analysis set of such trials
gives one R² (how well the surrogate effect predicts the survival effect);
pairing each set with a held-out discovery study links trial-level R² to
the patient-level metrics, which is the comparison the whole pipeline is
built to make.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .metrics import StudyMetrics
from .scenario import Cell
from .survmodels import SurvivalSample, fit_cox
from .survsim import Trial


class PoolError(RuntimeError):
    """The trial pool cannot support the requested pairing."""


@dataclass(frozen=True)
class TrialEffect:
    """Treatment-effect pair of one trial, on the full population."""

    log_hr_os: float
    delta_median_se: float
    cell: Cell | None = None
    replicate: int | None = None

    def __post_init__(self):
        if not (np.isfinite(self.log_hr_os) and np.isfinite(self.delta_median_se)):
            raise ValueError("trial effects must be finite")


@dataclass(frozen=True)
class R2Result:
    """OLS fit summary; degenerate marks an all-equal x with r2 pinned to 0."""

    r2: float
    slope: float
    intercept: float
    degenerate: bool


@dataclass(frozen=True)
class MetaPair:
    """One meta-analysis R² paired with a held-out discovery study."""

    stratum: tuple
    pair_id: int
    r2: float
    discovery: StudyMetrics
    meta_size: int
    degenerate_r2: bool = False


def trial_effects(trial: Trial, t_star: float) -> TrialEffect:
    """Both treatment-effect estimates for one trial.

    log_hr_os comes from a univariate Cox fit of survival on arm over all
    patients (no landmark exclusion).  For the surrogate medians, patients
    dead by t_star get their y replaced by the largest y among patients
    alive at t_star, pooled over both arms; the difference of medians is
    arm 1 minus arm 0.
    """
    fit = fit_cox(SurvivalSample(trial.time_weeks, trial.event, trial.arm))
    log_hr_os = float(fit.coef[0])

    y = trial.y_observed.astype(float).copy()
    early = trial.event & (trial.time_weeks <= t_star)
    if early.any():
        at_risk = trial.time_weeks > t_star
        if not at_risk.any():
            raise PoolError("no patients alive at the landmark to impute from")
        y[early] = trial.y_observed[at_risk].max()
    delta = float(np.median(y[trial.arm == 1]) - np.median(y[trial.arm == 0]))
    return TrialEffect(
        log_hr_os=log_hr_os,
        delta_median_se=delta,
        cell=trial.cell,
        replicate=trial.replicate,
    )


def _ols_r2(x: np.ndarray, y: np.ndarray) -> R2Result:
    xbar = x.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    if sxx == 0.0:
        return R2Result(r2=0.0, slope=0.0, intercept=float(y.mean()), degenerate=True)
    slope = float(np.sum((x - xbar) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * xbar)
    resid = y - (intercept + slope * x)
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        # Flat y is fit exactly by the flat line.
        return R2Result(r2=1.0, slope=slope, intercept=intercept, degenerate=False)
    r2 = 1.0 - float(np.sum(resid**2)) / sst
    return R2Result(
        r2=min(max(r2, 0.0), 1.0), slope=slope, intercept=intercept, degenerate=False
    )


def fit_r2(effects) -> R2Result:
    """Unweighted OLS of log_hr_os on delta_median_se, R² clamped to [0, 1].

    All-equal x values make the regression degenerate; r2 is then defined
    as 0 and flagged.
    """
    if len(effects) < 3:
        raise ValueError("need at least 3 effects for a regression")
    x = np.array([e.delta_median_se for e in effects], dtype=float)
    y = np.array([e.log_hr_os for e in effects], dtype=float)
    return _ols_r2(x, y)


_POOL_COLUMNS = [
    "alpha", "beta1", "mean_active", "replicate",
    "log_hr_os", "delta_median_se",
    "c_index", "ibs", "scaled_ibs", "log_hr_se", "excluded_count", "tau",
]


def _row_metrics(row) -> StudyMetrics:
    return StudyMetrics(
        c_index=float(row.c_index),
        ibs=float(row.ibs),
        scaled_ibs=float(row.scaled_ibs),
        log_hr_se=float(row.log_hr_se),
        excluded_count=int(row.excluded_count),
        tau=float(row.tau),
    )


def assemble_pairs(
    pool: pd.DataFrame,
    mode: str,
    dups: int,
    n_pairs: int,
    stream: np.random.Generator,
) -> list[MetaPair]:
    """Draw meta-analysis sets and their discovery studies from a trial pool.

    pool must hold one row per usable trial with columns alpha, beta1,
    mean_active, replicate, the two effect estimates, and the patient-level
    metrics.  Sampling is sequential in a fixed stratum order (sorted alpha,
    then beta1, then active mean), so one stream reproduces the draw.

    fixed_beta1 mode strata are (alpha, beta1); each meta set takes `dups`
    replicates without replacement per active-mean value (15 studies at
    dups=3, 5 at dups=1) and the discovery study is drawn uniformly from the
    stratum's remaining trials.  mixed_beta1 mode strata are alpha alone;
    each meta set takes one study per (beta1, active mean) combination and
    the discovery study, drawn from the stratum remainder, has a uniformly
    random beta1.
    """
    if mode not in ("fixed_beta1", "mixed_beta1"):
        raise ValueError(f"unknown pairing mode {mode!r}")
    if dups < 1:
        raise ValueError("dups must be at least 1")
    missing = [c for c in _POOL_COLUMNS if c not in pool.columns]
    if missing:
        raise ValueError(f"pool is missing columns {missing}")
    pool = pool.sort_values(["alpha", "beta1", "mean_active", "replicate"]).reset_index(
        drop=True
    )
    alphas = sorted(pool["alpha"].unique())
    betas = sorted(pool["beta1"].unique())
    means = sorted(pool["mean_active"].unique())

    cell_rows = {
        key: grp.index.to_numpy()
        for key, grp in pool.groupby(["alpha", "beta1", "mean_active"], sort=True)
    }
    min_needed = dups + 1 if mode == "fixed_beta1" else 2
    for key, rows in cell_rows.items():
        if len(rows) < min_needed:
            raise PoolError(
                f"cell alpha={key[0]}, beta1={key[1]}, mean={key[2]} has only "
                f"{len(rows)} usable trials; need at least {min_needed}"
            )

    pairs: list[MetaPair] = []

    def draw(rows: np.ndarray, size: int) -> np.ndarray:
        return rows[stream.choice(len(rows), size=size, replace=False)]

    if mode == "fixed_beta1":
        for alpha in alphas:
            for beta1 in betas:
                stratum_rows = pool.index[
                    (pool["alpha"] == alpha) & (pool["beta1"] == beta1)
                ].to_numpy()
                for pair_id in range(n_pairs):
                    chosen = np.concatenate(
                        [draw(cell_rows[(alpha, beta1, m)], dups) for m in means]
                    )
                    rest = np.setdiff1d(stratum_rows, chosen)
                    disc = int(draw(rest, 1)[0])
                    fit = _ols_r2(
                        pool["delta_median_se"].to_numpy()[chosen],
                        pool["log_hr_os"].to_numpy()[chosen],
                    )
                    pairs.append(
                        MetaPair(
                            stratum=(alpha, beta1),
                            pair_id=pair_id,
                            r2=fit.r2,
                            discovery=_row_metrics(pool.iloc[disc]),
                            meta_size=len(chosen),
                            degenerate_r2=fit.degenerate,
                        )
                    )
    else:
        for alpha in alphas:
            stratum_rows = pool.index[pool["alpha"] == alpha].to_numpy()
            for pair_id in range(n_pairs):
                chosen = np.concatenate(
                    [
                        draw(cell_rows[(alpha, beta1, m)], 1)
                        for m in means
                        for beta1 in betas
                    ]
                )
                rest = np.setdiff1d(stratum_rows, chosen)
                disc = int(draw(rest, 1)[0])
                fit = _ols_r2(
                    pool["delta_median_se"].to_numpy()[chosen],
                    pool["log_hr_os"].to_numpy()[chosen],
                )
                pairs.append(
                    MetaPair(
                        stratum=(alpha, "mixed"),
                        pair_id=pair_id,
                        r2=fit.r2,
                        discovery=_row_metrics(pool.iloc[disc]),
                        meta_size=len(chosen),
                        degenerate_r2=fit.degenerate,
                    )
                )
    return pairs


def spearman(x, y) -> float:
    """Spearman rank correlation: Pearson correlation of mid-ranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 3:
        raise ValueError("need equal-length inputs of at least 3")
    rx = rankdata(x)
    ry = rankdata(y)
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise ValueError("zero variance in ranks")
    return float(np.corrcoef(rx, ry)[0, 1])


_METRIC_COLUMNS = ["c_index", "scaled_ibs", "ibs", "log_hr_se"]

DEFAULT_ALPHA_FILTERS = (
    ("all", None),
    ("alpha>0", lambda a: a > 0),
    ("alpha>=2", lambda a: a >= 2),
)


def correlation_report(pairs: pd.DataFrame, alpha_filters=DEFAULT_ALPHA_FILTERS) -> pd.DataFrame:
    """Spearman between each patient-level metric and R² across pairs.

    One row per (metric, alpha filter, stratum), where strata are the
    beta1_or_mixed levels plus a pooled row.  Empty or rank-degenerate
    groups are flagged with a NaN correlation.
    """
    rows = []
    strata = [("pooled", None)] + [
        (str(v), v) for v in sorted(pairs["beta1_or_mixed"].unique(), key=str)
    ]
    for metric in _METRIC_COLUMNS:
        for filter_name, predicate in alpha_filters:
            for stratum_name, stratum_value in strata:
                sub = pairs
                if predicate is not None:
                    sub = sub[predicate(sub["alpha"])]
                if stratum_value is not None:
                    sub = sub[sub["beta1_or_mixed"].astype(str) == stratum_value]
                try:
                    rho = spearman(sub[metric].to_numpy(), sub["r2"].to_numpy())
                except ValueError:
                    rho = float("nan")
                rows.append(
                    {
                        "scenario": pairs["scenario"].iloc[0] if len(pairs) else "",
                        "mode": pairs["mode"].iloc[0] if len(pairs) else "",
                        "metric": metric,
                        "alpha_filter": filter_name,
                        "stratum": stratum_name,
                        "spearman_rho": rho,
                        "n_pairs": len(sub),
                    }
                )
    return pd.DataFrame(rows)
