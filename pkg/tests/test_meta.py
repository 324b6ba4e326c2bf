import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surrsim.meta import (
    MetaPair,
    PoolError,
    TrialEffect,
    assemble_pairs,
    correlation_report,
    fit_r2,
    spearman,
    trial_effects,
)
from surrsim.scenario import PRESETS, expand_cells
from surrsim.survsim import Trial

T_STAR = 8.6964


def make_trial(time, event, y, arm):
    time = np.asarray(time, dtype=float)
    n = len(time)
    cell = expand_cells(PRESETS["Ks1"])[0]
    return Trial(
        cell=cell, replicate=0, beta0=-4.4, censor_time=float(time.max()),
        arm=np.asarray(arm), ks=np.full(n, 0.02), kg=np.full(n, 0.01),
        y_true=np.asarray(y, dtype=float), y_observed=np.asarray(y, dtype=float),
        time_weeks=time, event=np.asarray(event, dtype=bool),
    )


class TestTrialEffects:
    def test_median_difference_without_early_events(self):
        trial = make_trial(
            time=[10.0, 14.0, 18.0, 12.0, 16.0, 20.0],
            event=[True] * 6,
            y=[1.0, 2.0, 3.0, 5.0, 6.0, 7.0],
            arm=[0, 0, 0, 1, 1, 1],
        )
        got = trial_effects(trial, T_STAR)
        assert got.delta_median_se == pytest.approx(6.0 - 2.0)
        assert math.isfinite(got.log_hr_os)
        assert got.cell is trial.cell and got.replicate == 0

    def test_early_events_are_imputed_from_survivors(self):
        # the early death's y = 100 is replaced by the largest surviving y
        # pooled over arms (7.0), making arm 1's values (7, 6, 7)
        trial = make_trial(
            time=[10.0, 14.0, 18.0, 5.0, 16.0, 20.0],
            event=[True] * 6,
            y=[1.0, 2.0, 3.0, 100.0, 6.0, 7.0],
            arm=[0, 0, 0, 1, 1, 1],
        )
        got = trial_effects(trial, T_STAR)
        assert got.delta_median_se == pytest.approx(7.0 - 2.0)

    def test_imputation_ignores_event_status_of_survivors(self):
        # censored-after-landmark rows still belong to the imputation pool
        trial = make_trial(
            time=[10.0, 14.0, 18.0, 5.0, 16.0, 20.0],
            event=[True, True, True, True, True, False],
            y=[1.0, 2.0, 3.0, 100.0, 6.0, 9.0],
            arm=[0, 0, 0, 1, 1, 1],
        )
        got = trial_effects(trial, T_STAR)
        assert got.delta_median_se == pytest.approx(9.0 - 2.0)

    def test_no_survivors_to_impute_from(self):
        trial = make_trial(
            time=[1.0, 2.0, 3.0, 4.0],
            event=[True] * 4,
            y=[1.0, 2.0, 3.0, 4.0],
            arm=[0, 0, 1, 1],
        )
        with pytest.raises(PoolError, match="alive at the landmark"):
            trial_effects(trial, T_STAR)

    def test_effects_must_be_finite(self):
        with pytest.raises(ValueError, match="finite"):
            TrialEffect(log_hr_os=float("nan"), delta_median_se=0.0)


def effects(xy):
    return [TrialEffect(log_hr_os=y, delta_median_se=x) for x, y in xy]


class TestFitR2:
    def test_collinear_points_give_one(self):
        got = fit_r2(effects([(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)]))
        assert got.r2 == pytest.approx(1.0, abs=1e-12)
        assert got.slope == pytest.approx(2.0)
        assert got.intercept == pytest.approx(0.0)
        assert not got.degenerate

    def test_orthogonal_pattern_gives_zero(self):
        got = fit_r2(effects([(0.0, 1.0), (1.0, 0.0), (2.0, 1.0)]))
        assert got.r2 == pytest.approx(0.0, abs=1e-12)
        assert got.slope == pytest.approx(0.0)

    def test_degenerate_x_is_flagged(self):
        got = fit_r2(effects([(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)]))
        assert got.degenerate
        assert got.r2 == 0.0
        assert got.intercept == pytest.approx(3.0)

    def test_flat_y_fits_exactly(self):
        got = fit_r2(effects([(1.0, 2.0), (2.0, 2.0), (3.0, 2.0)]))
        assert got.r2 == 1.0
        assert not got.degenerate

    def test_needs_three_points(self):
        with pytest.raises(ValueError, match="3"):
            fit_r2(effects([(1.0, 2.0), (2.0, 4.0)]))

    def test_r2_equals_squared_correlation(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            x = rng.standard_normal(12)
            y = 0.7 * x + rng.standard_normal(12)
            got = fit_r2(effects(zip(x, y)))
            assert got.r2 == pytest.approx(np.corrcoef(x, y)[0, 1] ** 2, abs=1e-12)

    @given(
        a=st.floats(0.1, 5.0), b=st.floats(-3.0, 3.0),
        c=st.floats(0.1, 5.0), d=st.floats(-3.0, 3.0),
        seed=st.integers(0, 500),
    )
    @settings(max_examples=60, deadline=None)
    def test_r2_is_affine_invariant(self, a, b, c, d, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(8)
        y = rng.standard_normal(8)
        base = fit_r2(effects(zip(x, y))).r2
        moved = fit_r2(effects(zip(a * x + b, c * y + d))).r2
        assert moved == pytest.approx(base, abs=1e-9)


class TestSpearman:
    def test_exact_monotone(self):
        assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
        assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_reference_value(self):
        # two adjacent swaps on four points: rho = 1 - 6*4 / (4*15) = 0.6
        assert spearman([1, 2, 3, 4], [2, 1, 4, 3]) == pytest.approx(0.6, abs=1e-12)

    def test_midrank_ties(self):
        # ranks (1.5, 1.5, 3) vs (1, 2, 3): Pearson = 1.5 / sqrt(1.5 * 2)
        got = spearman([1.0, 1.0, 2.0], [1.0, 2.0, 3.0])
        assert got == pytest.approx(math.sqrt(3.0) / 2.0, abs=1e-12)

    def test_invariant_to_monotone_transforms(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(30)
        y = rng.standard_normal(30)
        base = spearman(x, y)
        assert spearman(np.exp(x), y**3) == pytest.approx(
            spearman(x, y**3), abs=1e-12
        )
        assert spearman(10.0 * x + 2.0, y) == pytest.approx(base, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError, match="at least 3"):
            spearman([1, 2], [1, 2])
        with pytest.raises(ValueError, match="zero variance"):
            spearman([1.0, 1.0, 1.0], [1, 2, 3])


def synthetic_pool(alphas, betas, means, reps, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for alpha in alphas:
        for beta1 in betas:
            for mean in means:
                for rep in range(reps):
                    rows.append({
                        "alpha": alpha, "beta1": beta1, "mean_active": mean,
                        "replicate": rep,
                        "log_hr_os": rng.standard_normal(),
                        "delta_median_se": rng.standard_normal(),
                        "c_index": rng.uniform(0.4, 0.9),
                        "ibs": rng.uniform(0.05, 0.2),
                        "scaled_ibs": rng.uniform(-0.1, 0.4),
                        "log_hr_se": rng.standard_normal(),
                        "excluded_count": int(rng.integers(0, 40)),
                        "tau": rng.uniform(50, 200),
                    })
    return pd.DataFrame(rows)


class TestAssemblePairs:
    def test_fixed_mode_sizes_and_strata(self):
        pool = synthetic_pool([0.0, 2.0], [0.0, -0.3], [0.02, 0.04], reps=6)
        pairs = assemble_pairs(pool, "fixed_beta1", dups=3, n_pairs=4,
                               stream=np.random.default_rng(1))
        assert len(pairs) == 4 * 4  # strata x n_pairs
        assert {p.stratum for p in pairs} == {
            (0.0, 0.0), (0.0, -0.3), (2.0, 0.0), (2.0, -0.3)
        }
        assert all(p.meta_size == 3 * 2 for p in pairs)  # dups x means
        assert all(0.0 <= p.r2 <= 1.0 for p in pairs)
        assert [p.pair_id for p in pairs if p.stratum == (0.0, 0.0)] == [0, 1, 2, 3]

    def test_mixed_mode_sizes_and_strata(self):
        pool = synthetic_pool([0.0, 2.0], [0.0, -0.3], [0.02, 0.04], reps=3)
        pairs = assemble_pairs(pool, "mixed_beta1", dups=1, n_pairs=5,
                               stream=np.random.default_rng(1))
        assert len(pairs) == 2 * 5
        assert {p.stratum for p in pairs} == {(0.0, "mixed"), (2.0, "mixed")}
        assert all(p.meta_size == 2 * 2 for p in pairs)  # betas x means

    def test_discovery_is_excluded_from_the_meta_set(self):
        # 4 replicates, dups=3, one mean: the discovery study is forced to be
        # the single unchosen trial, so its identity pins the leave-one-out
        # R² of the other three.
        pool = synthetic_pool([0.0], [0.0], [0.02], reps=4)
        xs = [0.0, 1.0, 2.0, 3.0]
        ys = [0.0, 1.0, 2.0, 5.0]
        pool["delta_median_se"] = xs
        pool["log_hr_os"] = ys
        pool["c_index"] = [0.1, 0.2, 0.3, 0.4]  # row tags

        def loo_r2(left_out):
            keep = [i for i in range(4) if i != left_out]
            x = np.array(xs)[keep]
            y = np.array(ys)[keep]
            return np.corrcoef(x, y)[0, 1] ** 2

        pairs = assemble_pairs(pool, "fixed_beta1", dups=3, n_pairs=30,
                               stream=np.random.default_rng(9))
        seen = set()
        for p in pairs:
            tag = round(p.discovery.c_index * 10) - 1
            seen.add(tag)
            assert p.r2 == pytest.approx(loo_r2(tag), abs=1e-12)
        assert len(seen) > 1  # the draw actually varies the held-out study

    def test_reproducible_with_equal_streams(self):
        pool = synthetic_pool([0.0, 2.0], [0.0], [0.02, 0.04], reps=5)
        run = lambda: [
            (p.stratum, p.pair_id, p.r2, p.discovery.c_index)
            for p in assemble_pairs(pool, "fixed_beta1", dups=3, n_pairs=6,
                                    stream=np.random.default_rng(77))
        ]
        assert run() == run()

    def test_pool_too_small_names_the_cell(self):
        pool = synthetic_pool([0.0], [0.0], [0.02, 0.04], reps=3)
        with pytest.raises(PoolError, match="alpha=0.0.*need at least 4"):
            assemble_pairs(pool, "fixed_beta1", dups=3, n_pairs=2,
                           stream=np.random.default_rng(0))

    def test_input_validation(self):
        pool = synthetic_pool([0.0], [0.0], [0.02], reps=5)
        with pytest.raises(ValueError, match="mode"):
            assemble_pairs(pool, "both", 3, 2, np.random.default_rng(0))
        with pytest.raises(ValueError, match="dups"):
            assemble_pairs(pool, "fixed_beta1", 0, 2, np.random.default_rng(0))
        with pytest.raises(ValueError, match="missing columns"):
            assemble_pairs(pool.drop(columns=["tau"]), "fixed_beta1", 3, 2,
                           np.random.default_rng(0))


class TestCorrelationReport:
    def _pairs_frame(self):
        rng = np.random.default_rng(5)
        rows = []
        for alpha in (0.0, 2.0, 4.0):
            for beta1 in ("0.0", "-0.3"):
                for k in range(8):
                    r2 = rng.uniform()
                    rows.append({
                        "scenario": "Ks1", "mode": "fixed_beta1",
                        "alpha": alpha, "beta1_or_mixed": beta1,
                        "pair_id": k, "r2": r2,
                        # c_index tracks r2 exactly; scaled_ibs anti-tracks
                        "c_index": r2, "scaled_ibs": -r2,
                        "ibs": 0.1 if beta1 == "-0.3" else rng.uniform(),
                        "log_hr_se": rng.standard_normal(),
                    })
        return pd.DataFrame(rows)

    def test_structure_and_perfect_correlations(self):
        report = correlation_report(self._pairs_frame())
        # 4 metrics x 3 filters x (pooled + 2 strata)
        assert len(report) == 4 * 3 * 3
        pooled_c = report[
            (report.metric == "c_index")
            & (report.alpha_filter == "all")
            & (report.stratum == "pooled")
        ]
        assert pooled_c.spearman_rho.iloc[0] == pytest.approx(1.0)
        assert pooled_c.n_pairs.iloc[0] == 48
        pooled_s = report[
            (report.metric == "scaled_ibs")
            & (report.alpha_filter == "all")
            & (report.stratum == "pooled")
        ]
        assert pooled_s.spearman_rho.iloc[0] == pytest.approx(-1.0)

    def test_alpha_filters_shrink_the_pool(self):
        report = correlation_report(self._pairs_frame())
        counts = {
            name: report[
                (report.metric == "c_index")
                & (report.alpha_filter == name)
                & (report.stratum == "pooled")
            ].n_pairs.iloc[0]
            for name in ("all", "alpha>0", "alpha>=2")
        }
        assert counts == {"all": 48, "alpha>0": 32, "alpha>=2": 32}

    def test_degenerate_rank_group_is_nan(self):
        report = correlation_report(self._pairs_frame())
        row = report[
            (report.metric == "ibs")
            & (report.alpha_filter == "all")
            & (report.stratum == "-0.3")
        ]
        assert math.isnan(row.spearman_rho.iloc[0])
