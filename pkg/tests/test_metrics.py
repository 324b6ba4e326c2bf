import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from surrsim.metrics import (
    LandmarkDataset,
    MetricError,
    UnusableTrialError,
    _censor_survival,
    brier_at,
    harrell_c,
    integrated_brier,
    rebaseline,
    study_metrics,
)
from surrsim.scenario import PRESETS, PROFILES, derive_stream, expand_cells
from surrsim.survmodels import StepFunction, km_estimate
from surrsim.survsim import Trial, simulate_trial

T_STAR = 8.6964


def make_trial(time, event, y, arm=None, censor_time=None):
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    y = np.asarray(y, dtype=float)
    n = len(time)
    if arm is None:
        arm = np.zeros(n, dtype=int)
    if censor_time is None:
        censor_time = float(time.max())
    cell = expand_cells(PRESETS["Ks1"])[0]
    return Trial(
        cell=cell, replicate=0, beta0=-4.4, censor_time=censor_time,
        arm=np.asarray(arm), ks=np.full(n, 0.02), kg=np.full(n, 0.01),
        y_true=y, y_observed=y, time_weeks=time, event=event,
    )


def brute_force_c(risks, times, events):
    conc = ties = comp = 0
    n = len(risks)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if times[i] < times[j] and events[i]:
                comp += 1
                if risks[i] > risks[j]:
                    conc += 1
                elif risks[i] == risks[j]:
                    ties += 1
    return (conc + 0.5 * ties) / comp


class TestHarrellC:
    def test_perfect_concordance(self):
        assert harrell_c([3, 2, 1], [1, 2, 3], [True] * 3) == 1.0
        assert harrell_c([1, 2, 3], [1, 2, 3], [True] * 3) == 0.0

    def test_tied_risks_count_half(self):
        got = harrell_c([2, 2, 1], [1, 2, 3], [True] * 3)
        assert got == pytest.approx(2.5 / 3.0, abs=1e-12)

    def test_censored_rows_only_compare_forward(self):
        # only pairs with the earlier member uncensored are comparable
        got = harrell_c([3, 1, 2], [1, 2, 3], [True, False, False])
        assert got == 1.0

    def test_no_comparable_pairs(self):
        with pytest.raises(MetricError, match="comparable"):
            harrell_c([1, 2], [1, 2], [False, True])

    def test_input_validation(self):
        with pytest.raises(ValueError):
            harrell_c([1.0], [1.0], [True])
        with pytest.raises(ValueError):
            harrell_c([1, 2], [1, 2, 3], [True, True, True])

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            n = int(rng.integers(5, 40))
            risks = rng.integers(0, 5, n).astype(float)  # force risk ties
            times = np.round(rng.exponential(10.0, n), 1) + 0.1  # and time ties
            events = rng.uniform(size=n) < 0.7
            if not ((times[:, None] < times[None, :]) & events[:, None]).any():
                continue
            got = harrell_c(risks, times, events)
            assert got == pytest.approx(brute_force_c(risks, times, events), abs=1e-12)

    @given(
        shift=st.floats(-5.0, 5.0),
        scale=st.floats(0.1, 10.0),
        seed=st.integers(0, 1000),
    )
    @settings(max_examples=50, deadline=None)
    def test_invariant_to_monotone_risk_transforms(self, shift, scale, seed):
        rng = np.random.default_rng(seed)
        n = 20
        risks = rng.standard_normal(n)
        times = rng.exponential(5.0, n) + 0.1
        events = rng.uniform(size=n) < 0.8
        if not ((times[:, None] < times[None, :]) & events[:, None]).any():
            return
        base = harrell_c(risks, times, events)
        assert harrell_c(scale * risks + shift, times, events) == base
        assert harrell_c(np.exp(risks), times, events) == pytest.approx(base)


def golden_dataset():
    return LandmarkDataset(
        y=np.array([4.0, 3.0, 2.0, 1.0]),
        time=np.array([1.0, 2.0, 3.0, 4.0]),
        event=np.array([True, False, True, False]),
        arm=np.zeros(4, dtype=int),
        excluded_count=0,
    )


class TestBrier:
    def test_golden_ipcw_hand_case(self):
        # G drops to 2/3 at the censoring at t=2 and to 0 at t=4.  At t=2.5:
        # row 1 (dead at 1):      (0 - 0.5)^2 / G(1-)  = 0.25 / 1
        # row 2 (censored at 2):  0
        # row 3 (alive, dies 3):  (1 - 0.7)^2 / G(2.5) = 0.09 * 3/2
        # row 4 (alive):          (1 - 0.8)^2 / G(2.5) = 0.04 * 3/2
        # average over n = 4 rows: 0.445 / 4
        data = golden_dataset()
        g = StepFunction(np.array([2.0, 4.0]), np.array([2.0 / 3.0, 0.0]))
        preds = np.array([0.5, 0.6, 0.7, 0.8])
        assert brier_at(2.5, data, preds, g) == pytest.approx(0.111250, abs=1e-12)

    def test_zero_censor_weight_raises(self):
        data = golden_dataset()
        g = StepFunction(np.array([2.0, 4.0]), np.array([2.0 / 3.0, 0.0]))
        with pytest.raises(MetricError, match="horizon"):
            brier_at(4.5, data, np.full(4, 0.5), g)

    def test_perfect_predictions_score_zero(self):
        data = LandmarkDataset(
            y=np.arange(4.0), time=np.array([1.0, 2.0, 3.0, 4.0]),
            event=np.ones(4, dtype=bool), arm=np.zeros(4, dtype=int),
            excluded_count=0,
        )
        ones = StepFunction(np.array([]), np.array([]))
        assert brier_at(2.5, data, np.array([0.0, 0.0, 1.0, 1.0]), ones) == 0.0

    def test_uninformative_predictions_score_quarter(self):
        data = LandmarkDataset(
            y=np.arange(6.0), time=np.arange(1.0, 7.0),
            event=np.ones(6, dtype=bool), arm=np.zeros(6, dtype=int),
            excluded_count=0,
        )
        ones = StepFunction(np.array([]), np.array([]))
        assert brier_at(3.5, data, np.full(6, 0.5), ones) == pytest.approx(0.25)

    def test_prediction_alignment_checked(self):
        data = golden_dataset()
        ones = StepFunction(np.array([]), np.array([]))
        with pytest.raises(ValueError, match="align"):
            brier_at(2.5, data, np.full(3, 0.5), ones)


class TestIntegratedBrier:
    def test_constant_integrand_hand_value(self):
        data = LandmarkDataset(
            y=np.arange(4.0), time=np.array([1.0, 2.0, 3.0, 4.0]),
            event=np.ones(4, dtype=bool), arm=np.zeros(4, dtype=int),
            excluded_count=0,
        )
        ones = StepFunction(np.array([]), np.array([]))
        got = integrated_brier(data, lambda t: np.full(4, 0.5), ones, tau=4.0)
        # BS(t) = 1/4 on the whole grid; trapz over [1, 4] then / tau
        assert got == pytest.approx(0.25 * 3.0 / 4.0, abs=1e-12)

    def test_matches_independent_reimplementation(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            n = 60
            time = rng.exponential(10.0, n) + 0.01
            event = rng.uniform(size=n) < 0.7
            if event.sum() < 3 or (~event).sum() < 2:
                continue
            y = rng.standard_normal(n)
            data = LandmarkDataset(
                y=y, time=time, event=event, arm=np.zeros(n, dtype=int),
                excluded_count=0,
            )
            g = km_estimate(time, ~event)
            lam = 0.05 * np.exp(0.3 * y)
            predict = lambda t: np.exp(-lam * t)
            tau = float(np.quantile(time, 0.9))

            grid = np.unique(time[event])
            grid = grid[grid <= tau]
            scores = []
            for t in grid:
                total = 0.0
                for i in range(n):
                    s_i = math.exp(-lam[i] * t)
                    if time[i] <= t and event[i]:
                        total += s_i**2 / g.left(time[i])
                    elif time[i] > t:
                        total += (1.0 - s_i) ** 2 / g(t)
                scores.append(total / n)
            expected = trapezoid(scores, grid) / tau

            got = integrated_brier(data, predict, g, tau)
            assert got == pytest.approx(expected, abs=1e-12)

    def test_empty_grid_raises(self):
        data = golden_dataset()
        ones = StepFunction(np.array([]), np.array([]))
        with pytest.raises(MetricError, match="tau"):
            integrated_brier(data, lambda t: np.full(4, 0.5), ones, tau=0.5)


class TestCensorSurvival:
    def test_no_censoring_gives_constant_one(self):
        data = LandmarkDataset(
            y=np.arange(4.0), time=np.array([1.0, 2.0, 3.0, 4.0]),
            event=np.ones(4, dtype=bool), arm=np.zeros(4, dtype=int),
            excluded_count=0,
        )
        g = _censor_survival(data)
        assert g(0.0) == 1.0 and g(100.0) == 1.0

    def test_exponential_form_stays_positive(self):
        data = LandmarkDataset(
            y=np.arange(3.0), time=np.array([1.0, 2.0, 3.0]),
            event=np.array([True, False, True]), arm=np.zeros(3, dtype=int),
            excluded_count=0,
        )
        g = _censor_survival(data)
        # single censoring at t=2 with two at risk
        assert g(2.0) == pytest.approx(math.exp(-0.5), abs=1e-12)
        assert g(50.0) > 0.0


class TestRebaseline:
    def test_drops_early_events_with_closed_boundary(self):
        time = np.array([3.0, T_STAR, 10.0, 20.0] + [30.0] * 8)
        event = np.array([True, True, True, False] + [True] * 8)
        y = np.arange(12.0)
        trial = make_trial(time, event, y, censor_time=30.0)
        data = rebaseline(trial, T_STAR)
        assert data.excluded_count == 2  # t = 3 and the exact-landmark event
        assert data.n == 10
        assert data.time[0] == pytest.approx(10.0 - T_STAR)
        assert np.array_equal(data.y, y[2:])

    def test_censoring_before_landmark_is_unusable(self):
        trial = make_trial([5.0] * 12, [True] * 12, np.arange(12.0), censor_time=5.0)
        with pytest.raises(UnusableTrialError, match="precedes"):
            rebaseline(trial, T_STAR)

    def test_too_few_rows_is_unusable(self):
        time = np.array([1.0] * 6 + [20.0] * 6)
        event = np.array([True] * 6 + [True] * 6)
        trial = make_trial(time, event, np.arange(12.0), censor_time=20.0)
        with pytest.raises(UnusableTrialError, match="too small"):
            rebaseline(trial, T_STAR)

    def test_no_remaining_events_is_unusable(self):
        time = np.array([20.0] * 12)
        event = np.zeros(12, dtype=bool)
        trial = make_trial(time, event, np.arange(12.0), censor_time=20.0)
        with pytest.raises(UnusableTrialError, match="too small"):
            rebaseline(trial, T_STAR)


class TestStudyMetrics:
    def _metrics(self, cell_index):
        spec = PRESETS["Ks1"].with_profile(PROFILES["desk"])
        cell = expand_cells(spec)[cell_index]
        trial = simulate_trial(cell, spec, -4.41, 0, derive_stream(3, cell_index, 0))
        return study_metrics(trial, spec.t_star), trial, spec

    def test_informative_cell(self):
        got, trial, spec = self._metrics(cell_index=6)  # alpha = 2, beta1 = 0
        assert 0.55 < got.c_index < 0.9
        assert 0.0 < got.ibs < 0.25
        assert 0.0 < got.scaled_ibs <= 1.0
        assert got.log_hr_se > 0.0
        data = rebaseline(trial, spec.t_star)
        assert got.excluded_count == data.excluded_count
        assert got.tau == pytest.approx(float(np.quantile(data.time, 0.95)))

    def test_null_cell_is_near_chance(self):
        got, _, _ = self._metrics(cell_index=0)  # alpha = 0, beta1 = 0
        assert 0.35 < got.c_index < 0.65
        assert abs(got.scaled_ibs) < 0.2
        assert math.isfinite(got.log_hr_se)
