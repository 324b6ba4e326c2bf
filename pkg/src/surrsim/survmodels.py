"""Survival estimators: Cox proportional hazards, Breslow baseline, Kaplan-Meier.

Small, dependency-free implementations sized for two-arm trial data: Newton
iterations with step-halving on the Breslow partial likelihood, optional
stratification (per-stratum risk sets, summed score and information), and
right-continuous step functions for every estimated curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class CoxError(RuntimeError):
    """Cox model fitting failed structurally (no events, singular information)."""


# Monotone-likelihood guard: coefficients walking past this bound are clamped
# and the fit reported as not converged.
_COEF_BOUND = 20.0


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function with left limits.

    values[i] applies on [knots[i], knots[i+1]); `initial` applies before
    the first knot.
    """

    knots: np.ndarray
    values: np.ndarray
    initial: float = 1.0

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.ndim != 1 or values.shape != knots.shape:
            raise ValueError("knots and values must be 1-D and equal length")
        if len(knots) > 1 and np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def _eval(self, t, side):
        idx = np.searchsorted(self.knots, np.asarray(t, dtype=float), side=side)
        padded = np.concatenate([[self.initial], self.values])
        out = padded[idx]
        if out.ndim == 0:
            return float(out)
        return out

    def __call__(self, t):
        """Value at t (right-continuous)."""
        return self._eval(t, "right")

    def left(self, t):
        """Left limit at t: the value just before t."""
        return self._eval(t, "left")


@dataclass(frozen=True)
class SurvivalSample:
    """Right-censored sample: times, event flags, covariates, optional strata."""

    time: np.ndarray
    event: np.ndarray
    covariates: np.ndarray
    strata: np.ndarray | None = None

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float)
        event = np.asarray(self.event, dtype=bool)
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        if cov.ndim != 2 or len(cov) != len(time) or len(event) != len(time):
            raise ValueError("time, event and covariates must align row-wise")
        if np.any(~np.isfinite(time)) or np.any(time <= 0):
            raise ValueError("times must be positive and finite")
        strata = self.strata
        if strata is not None:
            strata = np.asarray(strata)
            if len(strata) != len(time):
                raise ValueError("strata must align with time")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "strata", strata)

    @property
    def n(self) -> int:
        return len(self.time)

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def stratum_indices(self):
        """Yield (stratum label, row indices); one (None, all) when unstratified."""
        if self.strata is None:
            yield None, np.arange(self.n)
            return
        for label in np.unique(self.strata):
            yield label, np.flatnonzero(self.strata == label)


def _stratum_terms(time, event, cov, beta):
    """Breslow partial log-likelihood, score and information for one stratum.

    Ascending-time formulation with suffix sums for the risk sets.
    """
    order = np.argsort(time, kind="stable")
    t = time[order]
    e = event[order]
    x = cov[order]
    p = x.shape[1]

    eta = x @ beta
    w = np.exp(eta)
    wx = w[:, None] * x
    # S2 as flattened p*p columns so one suffix-sum pass covers everything.
    wxx = wx[:, :, None] * x[:, None, :]

    s0 = np.cumsum(w[::-1])[::-1]
    s1 = np.cumsum(wx[::-1], axis=0)[::-1]
    s2 = np.cumsum(wxx[::-1], axis=0)[::-1]

    et = t[e]
    if len(et) == 0:
        return 0.0, np.zeros(p), np.zeros((p, p))
    uniq, first = np.unique(et, return_index=True)
    d = np.diff(np.append(first, len(et)))
    ex = x[e]
    bounds = np.append(first, len(et))
    sx = np.add.reduceat(ex, bounds[:-1], axis=0)
    seta = np.add.reduceat(eta[e], bounds[:-1])

    at = np.searchsorted(t, uniq, side="left")
    s0u = s0[at]
    s1u = s1[at]
    s2u = s2[at]

    ll = float(np.sum(seta - d * np.log(s0u)))
    mean = s1u / s0u[:, None]
    score = sx.sum(axis=0) - (d[:, None] * mean).sum(axis=0)
    info = (
        (d[:, None, None] * (s2u / s0u[:, None, None])).sum(axis=0)
        - (d[:, None, None] * mean[:, None, :] * mean[:, :, None]).sum(axis=0)
    )
    return ll, score, info


@dataclass(frozen=True)
class CoxFit:
    """Fitted Cox model: coefficients and diagnostics."""

    coef: np.ndarray
    loglik: float
    score: np.ndarray
    information: np.ndarray
    iterations: int
    converged: bool


def _evaluate(sample: SurvivalSample, beta):
    ll = 0.0
    score = np.zeros(sample.p)
    info = np.zeros((sample.p, sample.p))
    for _, idx in sample.stratum_indices():
        l, s, i = _stratum_terms(
            sample.time[idx], sample.event[idx], sample.covariates[idx], beta
        )
        ll += l
        score += s
        info += i
    return ll, score, info


def fit_cox(sample: SurvivalSample, max_iter: int = 50) -> CoxFit:
    """Newton fit of the Breslow partial likelihood, from beta = 0.

    Step-halving keeps the log-likelihood monotone; convergence requires
    max |score| < 1e-9 * (1 + |loglik|).  A coefficient escaping past
    +-20 (monotone likelihood) is clamped and the fit marked unconverged.
    """
    if not sample.event.any():
        raise CoxError("no events in sample")
    p = sample.p
    beta = np.zeros(p)
    ll, score, info = _evaluate(sample, beta)
    if p == 0:
        return CoxFit(beta, ll, score, info, 0, True)

    def small(score, ll):
        return np.max(np.abs(score)) < 1e-9 * (1.0 + abs(ll))

    converged = small(score, ll)
    clamped = False
    iterations = 0
    while not converged and iterations < max_iter:
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise CoxError("singular information matrix") from None
        new_beta = beta + step
        new_ll, new_score, new_info = _evaluate(sample, new_beta)
        halvings = 0
        while new_ll < ll and halvings < 30:
            step = 0.5 * step
            new_beta = beta + step
            new_ll, new_score, new_info = _evaluate(sample, new_beta)
            halvings += 1
        if new_ll < ll:
            # Cannot improve along the Newton direction; stop where we are.
            break
        iterations += 1
        beta, ll, score, info = new_beta, new_ll, new_score, new_info
        if np.any(np.abs(beta) > _COEF_BOUND):
            # Monotone likelihood: the walk will not stop on its own.
            beta = np.clip(beta, -_COEF_BOUND, _COEF_BOUND)
            ll, score, info = _evaluate(sample, beta)
            clamped = True
            break
        converged = small(score, ll)
    if clamped:
        converged = False
    return CoxFit(
        coef=beta,
        loglik=ll,
        score=score,
        information=info,
        iterations=iterations,
        converged=converged,
    )


def breslow_baseline(fit: CoxFit, sample: SurvivalSample) -> dict:
    """Per-stratum baseline survival by the Breslow estimator.

    S0(t) = exp(-H0(t)) with H0(t) the cumulative sum of d_j over the
    risk-set weight totals at event times up to t.  Returns a dict mapping
    stratum label (None when unstratified) to a StepFunction.
    """
    w_all = np.exp(sample.covariates @ fit.coef)
    out = {}
    for label, idx in sample.stratum_indices():
        t = sample.time[idx]
        e = sample.event[idx]
        w = w_all[idx]
        order = np.argsort(t, kind="stable")
        t, e, w = t[order], e[order], w[order]
        s0 = np.cumsum(w[::-1])[::-1]
        et = t[e]
        if len(et) == 0:
            out[label] = StepFunction(np.array([]), np.array([]), initial=1.0)
            continue
        uniq, first = np.unique(et, return_index=True)
        d = np.diff(np.append(first, len(et)))
        at = np.searchsorted(t, uniq, side="left")
        increments = d / s0[at]
        out[label] = StepFunction(uniq, np.exp(-np.cumsum(increments)), initial=1.0)
    return out


def predict_survival(fit: CoxFit, baseline: StepFunction, x, t):
    """S(t | x) = S0(t) ** exp(x . coef) for one covariate vector."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    risk = float(np.exp(x @ fit.coef))
    return baseline(t) ** risk


def km_estimate(time, event) -> StepFunction:
    """Kaplan-Meier product-limit estimate of the survival function."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    if len(time) == 0:
        raise ValueError("empty sample")
    order = np.argsort(time, kind="stable")
    t = time[order]
    e = event[order]
    et = t[e]
    if len(et) == 0:
        return StepFunction(np.array([]), np.array([]), initial=1.0)
    uniq, first = np.unique(et, return_index=True)
    d = np.diff(np.append(first, len(et)))
    n_at_risk = len(t) - np.searchsorted(t, uniq, side="left")
    factors = 1.0 - d / n_at_risk
    return StepFunction(uniq, np.cumprod(factors), initial=1.0)
