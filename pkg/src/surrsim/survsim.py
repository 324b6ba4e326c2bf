"""Event-time simulation under a trajectory-linked proportional hazards model.

The hazard for one patient is

    h(t) = gamma * t**(gamma - 1) * exp(beta0 + beta1 * trt + alpha * f(t))

with f the bi-exponential tumor trajectory.  Event times are drawn by
inverse transform: solve H(T) = -log(u) for the cumulative hazard H and one
uniform u per patient, censoring at the horizon when H never reaches the
target.

The inversion has no closed form, so the sampler brackets the root by
marching the cumulative hazard over a doubling time grid (each segment
integrated by adaptive Gauss-Legendre panels with an embedded 7/15 point
error estimate) and then refines inside the bracket with a safeguarded
regula falsi / bisection hybrid.  The refinement accumulates the cumulative
hazard at the moving left edge, so each iteration integrates only a
shrinking subinterval.  Everything is vectorized across patients; the
per-draw residual |H(T) + log(u)| is checked to 1e-6 before returning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import roots_legendre

from .scenario import Cell, ScenarioSpec
from .trajectory import TrajectoryParams, sample_params_batch

# Hazard values are capped at exp(_LOG_HAZARD_CAP) per week.  The cap only
# engages far beyond any reachable event time (a patient facing 1e10 events
# per week has been dead for ages), but it keeps the quadrature finite when
# a growth trajectory explodes inside a bracketing segment.
_LOG_HAZARD_CAP = math.log(1e10)

# Growth exponent kg * t is capped at 500 inside the trajectory evaluation;
# exp(500) is already astronomically past any crossing region.
_EXP_ARG_CAP = 500.0

# Quadrature panel acceptance: error <= max(abs, rel * |integral|).
_PANEL_ABS_TOL = 1e-10
_PANEL_REL_TOL = 1e-9

# Residual target for the root refinement, with headroom under the 1e-6
# contract to absorb accumulated quadrature error.
_RESIDUAL_TOL = 1e-7

_GL15_X, _GL15_W = roots_legendre(15)
_GL7_X, _GL7_W = roots_legendre(7)
_NODES = np.concatenate([_GL15_X, _GL7_X])


class CalibrationError(RuntimeError):
    """Baseline log-hazard calibration could not meet its contract."""


class InversionError(RuntimeError):
    """Event-time inversion failed to reach its residual tolerance."""


@dataclass(frozen=True)
class HazardParams:
    """Scalar hazard specification for a single patient."""

    gamma: float
    beta0: float
    beta1: float
    alpha: float
    trt: int
    trajectory: TrajectoryParams

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.trt not in (0, 1):
            raise ValueError("trt must be 0 or 1")


def hazard(params: HazardParams, t):
    """Closed-form hazard at scalar or array t > 0 (t = 0 allowed for gamma 1)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be nonnegative")
    traj = params.trajectory
    with np.errstate(over="ignore", divide="ignore"):
        f = np.exp(-traj.ks * t) + np.exp(np.minimum(traj.kg * t, _EXP_ARG_CAP)) - 2.0
        log_h = params.beta0 + params.beta1 * params.trt + params.alpha * f
        if params.gamma != 1.0:
            log_h = log_h + math.log(params.gamma) + (params.gamma - 1.0) * np.log(t)
        out = np.exp(np.minimum(log_h, _LOG_HAZARD_CAP))
    if out.ndim == 0:
        return float(out)
    return out


def cumulative_hazard(params: HazardParams, t: float) -> float:
    """H(t) = integral of the hazard on [0, t], by adaptive quadrature.

    Absolute tolerance 1e-10, relative 1e-8.  This is the reference
    implementation the sampler is validated against; it is scalar and makes
    no attempt to be fast.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    if t == 0:
        return 0.0
    value, _ = quad(
        lambda s: hazard(params, s), 0.0, t, epsabs=1e-10, epsrel=1e-8, limit=500
    )
    return value


def _make_hazard_fn(ks, kg, lin, alpha, gamma):
    """Vectorized row-indexed hazard evaluator for the batch sampler.

    Returns h_fn(idx, t_matrix) -> hazard values, where row r of t_matrix
    holds quadrature nodes for patient idx[r].
    """
    ks = np.asarray(ks, dtype=float)
    kg = np.asarray(kg, dtype=float)
    lin = np.asarray(lin, dtype=float)
    alpha = np.asarray(alpha, dtype=float)

    def h_fn(idx, t):
        ks_r = ks[idx][:, None]
        kg_r = kg[idx][:, None]
        lin_r = lin[idx][:, None]
        a_r = alpha[idx][:, None] if alpha.ndim else alpha
        with np.errstate(over="ignore", divide="ignore"):
            f = np.exp(-ks_r * t) + np.exp(np.minimum(kg_r * t, _EXP_ARG_CAP)) - 2.0
            log_h = lin_r + a_r * f
            if gamma != 1.0:
                log_h = log_h + math.log(gamma) + (gamma - 1.0) * np.log(t)
            return np.exp(np.minimum(log_h, _LOG_HAZARD_CAP))

    return h_fn


def _panel_values(h_fn, idx, a, b):
    """GL15 integral and embedded 7/15 error estimate for panels [a_i, b_i]."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    t = mid[:, None] + half[:, None] * _NODES
    vals = h_fn(idx, t)
    v15 = (vals[:, :15] @ _GL15_W) * half
    v7 = (vals[:, 15:] @ _GL7_W) * half
    return v15, np.abs(v15 - v7)


def _adaptive_integrals(h_fn, idx, a, b, max_depth=48):
    """Per-row integral of the hazard over [a_i, b_i], adaptively refined.

    Failing panels are bisected until the embedded error estimate passes
    max(abs, rel * |value|).  Panels surviving to max_depth are below the
    sampler's time resolution and are accepted as is.
    """
    total = np.zeros(len(idx))
    pos = np.arange(len(idx))
    cur_idx = np.asarray(idx)
    cur_a = np.asarray(a, dtype=float)
    cur_b = np.asarray(b, dtype=float)
    for depth in range(max_depth + 1):
        if len(cur_idx) == 0:
            break
        val, err = _panel_values(h_fn, cur_idx, cur_a, cur_b)
        ok = err <= np.maximum(_PANEL_ABS_TOL, _PANEL_REL_TOL * np.abs(val))
        if depth == max_depth:
            ok = np.ones_like(ok)
        np.add.at(total, pos[ok], val[ok])
        bad = ~ok
        if not bad.any():
            break
        mid = 0.5 * (cur_a[bad] + cur_b[bad])
        cur_idx = np.concatenate([cur_idx[bad], cur_idx[bad]])
        pos = np.concatenate([pos[bad], pos[bad]])
        cur_a, cur_b = (
            np.concatenate([cur_a[bad], mid]),
            np.concatenate([mid, cur_b[bad]]),
        )
    return total


def _march_boundaries(t_max: float) -> list[float]:
    # Doubling grid from one week out to the horizon, per the bracketing rule.
    bounds = [0.0, min(1.0, t_max)]
    while bounds[-1] < t_max:
        bounds.append(min(bounds[-1] * 2.0, t_max))
    return bounds


def _invert_batch(h_fn, targets, t_max):
    """Solve H_i(T_i) = targets_i per patient, censoring at t_max.

    Returns (times, events, residuals) with residuals = |H(T) - target|
    for event rows (0 for censored rows).
    """
    targets = np.asarray(targets, dtype=float)
    n = len(targets)
    times = np.full(n, float(t_max))
    events = np.zeros(n, dtype=bool)
    residuals = np.zeros(n)

    # Phase A: march the cumulative hazard over doubling segments until each
    # patient's target is bracketed or the horizon is reached.
    bounds = _march_boundaries(t_max)
    h_at_lo = np.zeros(n)
    bracket_lo = np.zeros(n)
    bracket_hi = np.zeros(n)
    h_at_hi = np.zeros(n)
    active = np.arange(n)
    for seg_a, seg_b in zip(bounds[:-1], bounds[1:]):
        if len(active) == 0:
            break
        seg = _adaptive_integrals(
            h_fn, active, np.full(len(active), seg_a), np.full(len(active), seg_b)
        )
        h_end = h_at_lo[active] + seg
        crossed = h_end >= targets[active]
        hit = active[crossed]
        bracket_lo[hit] = seg_a
        bracket_hi[hit] = seg_b
        h_at_hi[hit] = h_end[crossed]
        events[hit] = True
        h_at_lo[active[~crossed]] = h_end[~crossed]
        active = active[~crossed]

    rows = np.flatnonzero(events)
    if len(rows) == 0:
        return times, events, residuals

    # Phase B: safeguarded regula falsi inside each bracket.  The left edge
    # and its cumulative hazard advance together, so each iteration only
    # integrates [a, x].  The Illinois damping of the retained endpoint's
    # residual keeps the secant from stalling on one side.
    a = bracket_lo[rows]
    b = bracket_hi[rows]
    ha = h_at_lo[rows]
    tgt = targets[rows]
    fa = ha - tgt
    fb = h_at_hi[rows] - tgt
    last_neg = np.zeros(len(rows), dtype=int)

    for _ in range(200):
        width = b - a
        x = (a * fb - b * fa) / (fb - fa)
        inside = (x > a + 0.01 * width) & (x < b - 0.01 * width)
        x = np.where(inside, x, 0.5 * (a + b))
        dh = _adaptive_integrals(h_fn, rows, a, x)
        fx = ha + dh - tgt
        tiny = width <= 1e-12 * np.maximum(1.0, b)
        done = (np.abs(fx) <= _RESIDUAL_TOL) | tiny
        if done.any():
            sel = rows[done]
            times[sel] = x[done]
            residuals[sel] = np.abs(fx[done])
            keep = ~done
            rows, a, b, ha, tgt, fa, fb = (
                rows[keep], a[keep], b[keep], ha[keep], tgt[keep],
                fa[keep], fb[keep],
            )
            x, dh, fx = x[keep], dh[keep], fx[keep]
            last_neg = last_neg[keep]
            if len(rows) == 0:
                break
        neg = fx < 0
        ha = np.where(neg, ha + dh, ha)
        a = np.where(neg, x, a)
        b = np.where(neg, b, x)
        new_fa = np.where(neg, fx, fa)
        new_fb = np.where(neg, fb, fx)
        # Illinois step: repeated moves on one side halve the stale endpoint.
        new_fb = np.where(neg & (last_neg == 1), 0.5 * new_fb, new_fb)
        new_fa = np.where(~neg & (last_neg == 0), 0.5 * new_fa, new_fa)
        fa, fb = new_fa, new_fb
        last_neg = np.where(neg, 1, 0)
    if len(rows):
        raise InversionError(
            f"{len(rows)} event times failed to converge in 200 iterations"
        )
    worst = residuals.max() if len(residuals) else 0.0
    if worst > 1e-6:
        raise InversionError(f"worst inversion residual {worst:.3e} exceeds 1e-6")
    return times, events, residuals


def sample_event_time(
    params: HazardParams, stream: np.random.Generator, t_max: float
) -> tuple[float, bool]:
    """Draw one (time, event) pair by inverse transform.

    Consumes exactly one uniform variate from the stream.  Censors at t_max
    when the cumulative hazard never reaches -log(u).
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    u = max(stream.uniform(), 2.0**-53)
    traj = params.trajectory
    h_fn = _make_hazard_fn(
        np.array([traj.ks]),
        np.array([traj.kg]),
        np.array([params.beta0 + params.beta1 * params.trt]),
        np.array([params.alpha]),
        params.gamma,
    )
    times, events, _ = _invert_batch(h_fn, np.array([-math.log(u)]), t_max)
    return float(times[0]), bool(events[0])


@dataclass(frozen=True)
class Patient:
    """One simulated patient of a trial."""

    id: int
    arm: int
    trajectory: TrajectoryParams
    y_true: float
    y_observed: float
    time_weeks: float
    event: bool


@dataclass(frozen=True)
class Trial:
    """One simulated two-arm trial, stored column-wise."""

    cell: Cell
    replicate: int
    beta0: float
    censor_time: float
    arm: np.ndarray
    ks: np.ndarray
    kg: np.ndarray
    y_true: np.ndarray
    y_observed: np.ndarray
    time_weeks: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        n = len(self.arm)
        for name in ("ks", "kg", "y_true", "y_observed", "time_weeks", "event"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has wrong length")
        if np.any(self.time_weeks <= 0):
            raise ValueError("event times must be positive")

    @property
    def size(self) -> int:
        return len(self.arm)

    def patients(self):
        """Yield row views as Patient records (for inspection, not hot paths)."""
        for i in range(self.size):
            yield Patient(
                id=i,
                arm=int(self.arm[i]),
                trajectory=TrajectoryParams(float(self.ks[i]), float(self.kg[i])),
                y_true=float(self.y_true[i]),
                y_observed=float(self.y_observed[i]),
                time_weeks=float(self.time_weeks[i]),
                event=bool(self.event[i]),
            )


@dataclass(frozen=True)
class CalibrationResult:
    """Solved baseline log-hazard and the fractions achieved by the pilot."""

    beta0: float
    early_fraction: float
    event_fraction: float
    relaxed: bool
    pilot_size: int


def _pilot_integrals(cell: Cell, spec: ScenarioSpec, stream, n_pilot: int):
    """Base integrals (beta0 factored out) for a pooled two-arm pilot.

    Returns (early, late): per-patient integrals of the hazard with beta0 = 0
    over [0, t_star] and [0, max_duration].  The late integral is truncated
    once it saturates the event-fraction check; the truncation point is far
    above where exp(-e^beta0 * late) underflows to zero for every beta0 in
    the calibration bracket.
    """
    half = n_pilot // 2
    n = 2 * half
    trt = np.zeros(n)
    trt[half:] = 1.0
    mean_ks = np.where(trt == 1, cell.ks_mean_active, cell.ks_mean_control)
    mean_kg = np.where(trt == 1, cell.kg_mean_active, cell.kg_mean_control)
    ks, kg = sample_params_batch(
        stream, mean_ks, mean_kg, spec.omega_ks, spec.omega_kg, n,
        anchor=spec.lognormal_anchor,
    )
    h_fn = _make_hazard_fn(ks, kg, cell.beta1 * trt, np.full(n, cell.alpha), spec.gamma)

    idx = np.arange(n)
    early = _adaptive_integrals(
        h_fn, idx, np.zeros(n), np.full(n, spec.t_star)
    )

    cap = 1e9
    late = early.copy()
    bounds = _march_boundaries(spec.max_duration)
    start = spec.t_star
    active = idx[late < cap]
    for seg_b in [b for b in bounds if b > spec.t_star] :
        if len(active) == 0:
            break
        seg = _adaptive_integrals(
            h_fn, active, np.full(len(active), start), np.full(len(active), seg_b)
        )
        late[active] = np.minimum(late[active] + seg, cap)
        active = active[late[active] < cap]
        start = seg_b
    return early, late


def calibrate_beta0(
    cell: Cell,
    spec: ScenarioSpec,
    stream: np.random.Generator,
    n_pilot: int = 4000,
) -> CalibrationResult:
    """Solve for the baseline log-hazard beta0 of one cell.

    Targets P(event before t_star) = spec.early_event_target in a pooled
    two-arm pilot, by bisection on [-15, 0].  beta0 enters the cumulative
    hazard as a multiplicative factor, so the pilot integrals are computed
    once and each bisection step is a cheap vector average, free of any
    additional Monte Carlo noise.

    If the solved beta0 cannot reach spec.target_event_fraction events by
    the horizon, the early constraint is relaxed to the smallest beta0 that
    can, and the result carries relaxed=True.

    A configured beta0_override skips the solve; achieved fractions are
    still evaluated and reported for it.
    """
    if n_pilot < 2000:
        raise ValueError("pilot size must be at least 2000")
    early, late = _pilot_integrals(cell, spec, stream, n_pilot)

    def early_frac(b0):
        return float(np.mean(-np.expm1(-math.exp(b0) * early)))

    def late_frac(b0):
        return float(np.mean(-np.expm1(-math.exp(b0) * late)))

    if spec.beta0_override is not None:
        b0 = float(spec.beta0_override)
        return CalibrationResult(
            beta0=b0,
            early_fraction=early_frac(b0),
            event_fraction=late_frac(b0),
            relaxed=False,
            pilot_size=n_pilot,
        )

    lo, hi = -15.0, 0.0
    target = spec.early_event_target
    if early_frac(lo) > target or early_frac(hi) < target:
        raise CalibrationError(
            f"cell {cell.index} of {cell.scenario}: early-event target {target} "
            f"not bracketed by beta0 in [-15, 0]"
        )
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if early_frac(mid) < target:
            lo = mid
        else:
            hi = mid
    b0 = 0.5 * (lo + hi)

    achieved = early_frac(b0)
    if abs(achieved - target) > 0.01:
        raise CalibrationError(
            f"cell {cell.index} of {cell.scenario}: calibrated early fraction "
            f"{achieved:.4f} misses target {target} by more than 0.01"
        )

    relaxed = False
    if late_frac(b0) < spec.target_event_fraction:
        # Not enough events by the horizon; find the smallest beta0 that
        # meets the event-fraction target instead.
        relaxed = True
        if late_frac(0.0) < spec.target_event_fraction:
            b0 = 0.0
        else:
            lo2, hi2 = b0, 0.0
            for _ in range(60):
                mid = 0.5 * (lo2 + hi2)
                if late_frac(mid) < spec.target_event_fraction:
                    lo2 = mid
                else:
                    hi2 = mid
            b0 = hi2

    return CalibrationResult(
        beta0=b0,
        early_fraction=early_frac(b0),
        event_fraction=late_frac(b0),
        relaxed=relaxed,
        pilot_size=n_pilot,
    )


def simulate_trial(
    cell: Cell,
    spec: ScenarioSpec,
    beta0: float,
    replicate: int,
    stream: np.random.Generator,
) -> Trial:
    """Simulate one two-arm trial of 2 * spec.n_per_arm patients.

    Stream consumption order (fixed for reproducibility): the ks block,
    the kg block, the surrogate noise block, then one uniform per patient
    for the event-time inversion.

    Administrative censoring: follow-up stops at the calendar time of the
    ceil(target_event_fraction * 2n)-th event, capped at the horizon; with
    fewer events than that, the horizon itself censors.
    """
    n = spec.n_per_arm
    total = 2 * n
    arm = np.repeat(np.array([0, 1]), n)
    mean_ks = np.where(arm == 1, cell.ks_mean_active, cell.ks_mean_control)
    mean_kg = np.where(arm == 1, cell.kg_mean_active, cell.kg_mean_control)
    ks, kg = sample_params_batch(
        stream, mean_ks, mean_kg, spec.omega_ks, spec.omega_kg, total,
        anchor=spec.lognormal_anchor,
    )
    with np.errstate(over="ignore"):
        y_true = (
            np.exp(-ks * spec.t_star)
            + np.exp(np.minimum(kg * spec.t_star, _EXP_ARG_CAP))
            - 2.0
        )
    y_observed = y_true + spec.sigma_err * stream.standard_normal(total)

    u = np.maximum(stream.uniform(size=total), 2.0**-53)
    h_fn = _make_hazard_fn(
        ks, kg, beta0 + cell.beta1 * arm, np.full(total, cell.alpha), spec.gamma
    )
    raw_time, raw_event, _ = _invert_batch(h_fn, -np.log(u), spec.max_duration)

    n_events = int(raw_event.sum())
    wanted = math.ceil(spec.target_event_fraction * total)
    if n_events >= wanted:
        censor_time = float(np.sort(raw_time[raw_event])[wanted - 1])
        censor_time = min(censor_time, spec.max_duration)
    else:
        censor_time = spec.max_duration

    event = raw_event & (raw_time <= censor_time)
    time_weeks = np.minimum(raw_time, censor_time)

    return Trial(
        cell=cell,
        replicate=replicate,
        beta0=beta0,
        censor_time=censor_time,
        arm=arm,
        ks=ks,
        kg=kg,
        y_true=y_true,
        y_observed=y_observed,
        time_weeks=time_weeks,
        event=event,
    )
