"""Patient-level association metrics between the surrogate and survival.

All metrics are computed on the landmark population: patients still at risk
at t_star, with survival re-baselined so time zero is the landmark.  The
surrogate reading y is the risk score throughout, with the fixed orientation
"larger y means higher risk" (valid because the trajectory-hazard link is
nonnegative in every scenario; no auto-flip, so a null cell sits at C = 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .survmodels import (
    StepFunction,
    SurvivalSample,
    breslow_baseline,
    fit_cox,
)
from .survsim import Trial


class UnusableTrialError(RuntimeError):
    """Too few usable rows or events remain after the landmark exclusion."""


class MetricError(RuntimeError):
    """A metric is undefined on this input (no comparable pairs, bad horizon)."""


@dataclass(frozen=True)
class LandmarkDataset:
    """Landmark population: surrogate values and re-baselined survival."""

    y: np.ndarray
    time: np.ndarray
    event: np.ndarray
    arm: np.ndarray
    excluded_count: int

    def __post_init__(self):
        n = len(self.y)
        for name in ("time", "event", "arm"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has wrong length")
        if np.any(self.time <= 0):
            raise ValueError("re-baselined times must be positive")

    @property
    def n(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class StudyMetrics:
    """Per-trial patient-level association summary."""

    c_index: float
    ibs: float
    scaled_ibs: float
    log_hr_se: float
    excluded_count: int
    tau: float


def rebaseline(trial: Trial, t_star: float) -> LandmarkDataset:
    """Restrict to patients at risk at t_star and shift the time origin.

    Patients with an event at or before t_star (closed boundary) are
    excluded and counted.  Administrative censoring is late, so censored
    rows at or before the landmark cannot occur; a trial censored that
    early is unusable outright.
    """
    if trial.censor_time <= t_star:
        raise UnusableTrialError(
            f"censoring at {trial.censor_time:.3f} precedes the landmark {t_star:.3f}"
        )
    drop = trial.event & (trial.time_weeks <= t_star)
    keep = ~drop
    excluded = int(drop.sum())
    time = trial.time_weeks[keep] - t_star
    event = trial.event[keep]
    if keep.sum() < 10 or not event.any():
        raise UnusableTrialError(
            f"landmark population too small: {int(keep.sum())} rows, "
            f"{int(event.sum())} events"
        )
    return LandmarkDataset(
        y=trial.y_observed[keep],
        time=time,
        event=event,
        arm=trial.arm[keep],
        excluded_count=excluded,
    )


def harrell_c(risks, times, events) -> float:
    """Harrell's concordance index with the standard censoring rule.

    A pair is comparable when the times differ and the smaller time is an
    event; it is concordant when the shorter-lived patient has the larger
    risk; tied risks count one half.
    """
    risks = np.asarray(risks, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    if len(risks) < 2 or len(times) != len(risks) or len(events) != len(risks):
        raise ValueError("need aligned risk/time/event arrays of length >= 2")
    # Each unordered comparable pair appears exactly once: with i the
    # earlier, necessarily uncensored, patient.
    earlier = (times[:, None] < times[None, :]) & events[:, None]
    comparable = int(earlier.sum())
    if comparable == 0:
        raise MetricError("no comparable pairs")
    concordant = int((earlier & (risks[:, None] > risks[None, :])).sum())
    tied = int((earlier & (risks[:, None] == risks[None, :])).sum())
    return (concordant + 0.5 * tied) / comparable


def brier_at(t: float, dataset: LandmarkDataset, predictions, censor_dist) -> float:
    """IPCW Brier score at time t.

    predictions holds S(t | y_i) for every row.  Rows dead by t contribute
    (0 - S)^2 / G(time-), rows still under observation past t contribute
    (1 - S)^2 / G(t), rows censored by t contribute zero; the average runs
    over all n rows (Graf weighting).
    """
    g_t = float(censor_dist(t))
    if g_t <= 0.0:
        raise MetricError(f"censoring survival is zero at t={t}: beyond usable horizon")
    s = np.asarray(predictions, dtype=float)
    if s.shape != dataset.time.shape:
        raise ValueError("predictions must align with dataset rows")
    dead = dataset.event & (dataset.time <= t)
    alive = dataset.time > t
    total = 0.0
    if dead.any():
        g_dead = censor_dist.left(dataset.time[dead])
        total += float(np.sum(s[dead] ** 2 / g_dead))
    if alive.any():
        total += float(np.sum((1.0 - s[alive]) ** 2)) / g_t
    return total / dataset.n


def integrated_brier(dataset: LandmarkDataset, predictions, censor_dist, tau: float) -> float:
    """Trapezoidal integral of the Brier score over event times up to tau.

    The grid is the sorted unique event times in (0, tau]; the integral is
    divided by tau.  predictions is a callable mapping a time to the n
    survival probabilities S(t | y_i).
    """
    grid = np.unique(dataset.time[dataset.event])
    grid = grid[grid <= tau]
    if len(grid) == 0:
        raise MetricError(f"no event times at or below tau={tau}")
    scores = np.array([brier_at(t, dataset, predictions(t), censor_dist) for t in grid])
    return float(trapezoid(scores, grid)) / tau


def _censor_survival(dataset: LandmarkDataset) -> StepFunction:
    # Censoring distribution via an intercept-only Cox fit on the flipped
    # indicator; the Breslow exponential form keeps G strictly positive.
    flipped = ~dataset.event
    if not flipped.any():
        return StepFunction(np.array([]), np.array([]), initial=1.0)
    sample = SurvivalSample(
        time=dataset.time,
        event=flipped,
        covariates=np.empty((dataset.n, 0)),
    )
    fit = fit_cox(sample)
    return breslow_baseline(fit, sample)[None]


def study_metrics(trial: Trial, t_star: float, tau_quantile: float = 0.95) -> StudyMetrics:
    """All patient-level metrics of one trial.

    C uses pooled arms with risk = y.  The Brier machinery predicts from an
    unstratified Cox fit of time on y, weights by the flipped-indicator
    censoring model, and integrates to tau, the tau_quantile of the
    re-baselined follow-up; scaled_ibs normalizes against intercept-only
    predictions sent through the identical code path.  log_hr_se is the y
    coefficient of a Cox fit stratified by arm.
    """
    data = rebaseline(trial, t_star)
    c_index = harrell_c(data.y, data.time, data.event)

    cox_y = fit_cox(SurvivalSample(data.time, data.event, data.y))
    base_y = breslow_baseline(
        cox_y, SurvivalSample(data.time, data.event, data.y)
    )[None]
    risk = np.exp(data.y * cox_y.coef[0])

    null_sample = SurvivalSample(data.time, data.event, np.empty((data.n, 0)))
    null_fit = fit_cox(null_sample)
    base_null = breslow_baseline(null_fit, null_sample)[None]

    censor_dist = _censor_survival(data)
    tau = float(np.quantile(data.time, tau_quantile))

    ibs = integrated_brier(data, lambda t: base_y(t) ** risk, censor_dist, tau)
    ibs_null = integrated_brier(
        data, lambda t: np.full(data.n, base_null(t)), censor_dist, tau
    )
    scaled_ibs = 1.0 - ibs / ibs_null if ibs_null > 0 else 0.0

    strat = SurvivalSample(data.time, data.event, data.y, strata=data.arm)
    log_hr_se = float(fit_cox(strat).coef[0])

    return StudyMetrics(
        c_index=float(c_index),
        ibs=float(ibs),
        scaled_ibs=float(scaled_ibs),
        log_hr_se=log_hr_se,
        excluded_count=data.excluded_count,
        tau=tau,
    )
