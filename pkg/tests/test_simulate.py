import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aftmediation.simulate import (
    LOG_FIELDS,
    Censoring,
    SimScenario,
    SimSummary,
    SimulationError,
    apply_interval_censoring,
    apply_right_censoring,
    calibrate_censoring,
    emit_figure_data,
    generate,
    read_scenarios,
    run,
    summarize_log,
    write_replicate_log,
)
from aftmediation.survdata import EXACT, INTERVAL, RIGHT, summarize


class TestScenario:
    def test_truths(self):
        assert SimScenario.normal().ie_truth == 2.0
        assert SimScenario.weibull().ie_truth == pytest.approx(0.18, abs=1e-15)
        assert SimScenario.weibull().tau_truth == pytest.approx(0.68, abs=1e-15)

    def test_normal_preset(self):
        s = SimScenario.normal()
        assert s.outcome_coeffs == (180.0, 4.0, -4.0) and s.mediator_coeffs == (0.0, -0.5)
        assert s.scale == 1.0 and s.time_scale == "identity" and s.law == "normal"

    @pytest.mark.parametrize("kw", [dict(n=1), dict(replicates=0), dict(exposure_prob=1.0), dict(scale=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SimScenario.weibull(**kw)

    def test_invalid_censoring(self):
        with pytest.raises(ValueError):
            Censoring("right", 1.2)
        with pytest.raises(ValueError):
            Censoring("right", 0.3, interval_probs=(0.5, 0.5, 0.5, 0.5))
        with pytest.raises(ValueError):
            Censoring("sideways")


class TestGenerate:
    def test_deterministic(self):
        sc = SimScenario.normal(Censoring("right_interval", 0.7), n=300)
        assert generate(sc, 4) == generate(sc, 4)
        assert generate(sc, 4) != generate(sc, 5)

    def test_uncensored_is_all_exact(self):
        assert np.all(generate(SimScenario.weibull(n=200), 0).status == EXACT)

    def test_global_null(self):
        n = 4000
        sc = SimScenario.weibull(n=n, mediator_coeffs=(0, 0), outcome_coeffs=(4, 0, 0), seed=3)
        ds = generate(sc, 0)
        r = np.corrcoef(np.log(ds.time1), ds.exposure)[0, 1]
        assert abs(r) < 3 / math.sqrt(n)

    def test_mediator_model(self):
        ds = generate(SimScenario.weibull(n=20000, seed=1), 0)
        a = ds.exposure.astype(bool)
        assert abs(ds.mediator[a].mean() - ds.mediator[~a].mean() + 0.3) < 0.05
        assert abs(a.mean() - 0.5) < 0.02


class TestCensoring:
    @pytest.mark.parametrize("scenario, lo, hi", [
        (SimScenario.normal(Censoring("right", 0.7), n=100_000), 0.68, 0.72),
        (SimScenario.weibull(Censoring("right", 0.3), n=100_000), 0.28, 0.32),
    ], ids=["normal", "weibull"])
    def test_realized_fraction(self, scenario, lo, hi):
        assert lo <= summarize(generate(scenario, 0)).right_fraction <= hi

    def test_fraction_within_two_points_at_ten_thousand(self):
        for target in (0.1, 0.5, 0.9):
            s = summarize(generate(SimScenario.weibull(Censoring("right", target), n=10_000, seed=6), 0))
            assert abs(s.right_fraction - target) <= 0.02

    def test_calibration_is_shared_across_replicates(self):
        sc = SimScenario.weibull(Censoring("right", 0.3), n=50)
        assert calibrate_censoring(sc) is calibrate_censoring(SimScenario.weibull(Censoring("right", 0.3), n=999))
        assert calibrate_censoring(SimScenario.weibull()) is None

    def test_censoring_mass_above_all_times(self):
        t = np.array([1.0, 2.0, 3.0])
        time1, time2 = apply_right_censoring(t, np.full(3, 10.0))
        assert np.array_equal(time1, t) and np.array_equal(time2, t)

    def test_right_censoring_rule(self):
        time1, time2 = apply_right_censoring(np.array([1.0, 5.0, 3.0]), np.array([2.0, 2.0, 3.0]))
        assert list(time1) == [1.0, 2.0, 3.0]
        assert time2[0] == 1.0 and np.isnan(time2[1]) and time2[2] == 3.0

    def test_fixed_censoring_time(self):
        ds = generate(SimScenario.weibull(Censoring("fixed", censor_time=60.0), n=2000), 0)
        assert np.all(ds.time1[ds.status == RIGHT] == 60.0)
        assert np.all(ds.time1[ds.status == EXACT] <= 60.0)

    def test_interval_scenario_has_all_kinds(self):
        s = summarize(generate(SimScenario.normal(Censoring("right_interval", 0.7), n=4000), 0))
        assert s.n_exact == 0 and s.n_interval > 0 and abs(s.right_fraction - 0.7) < 0.03


class TestIntervalCensoring:
    def test_bracket_and_mean_length(self):
        rng = np.random.default_rng(0)
        t = rng.uniform(50, 300, 100_000)
        lengths, probs = (0.5, 1.0, 2.0, 4.0), (0.25, 0.4, 0.25, 0.1)
        lo, hi = apply_interval_censoring(t, t, lengths, probs, rng)
        assert np.all(lo < t) and np.all(t < hi)
        assert abs(np.mean(hi - lo) / np.dot(lengths, probs) - 1) < 0.02

    def test_zero_length_stays_exact(self):
        t = np.array([1.0, 2.0, 3.0])
        lo, hi = apply_interval_censoring(t, t, (0.0,), (1.0,), np.random.default_rng(1))
        assert np.array_equal(lo, t) and np.array_equal(hi, t)

    def test_right_censored_rows_untouched(self):
        t1 = np.array([1.0, 2.0])
        t2 = np.array([1.0, np.nan])
        lo, hi = apply_interval_censoring(t1, t2, (1.0,), (1.0,), np.random.default_rng(2))
        assert lo[1] == 2.0 and np.isnan(hi[1])
        assert lo[0] < 1.0 < hi[0]

    def test_floor_keeps_lower_bound_positive(self):
        t = np.full(1000, 0.1)
        lo, _ = apply_interval_censoring(t, t, (4.0,), (1.0,), np.random.default_rng(3))
        assert np.all(lo >= 1e-8)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0.01, 1e4), min_size=1, max_size=50), st.integers(0, 2**31))
    def test_bracket_property(self, times, seed):
        t = np.array(times)
        lo, hi = apply_interval_censoring(t, t, (0.5, 1.0, 2.0, 4.0), (0.25, 0.4, 0.25, 0.1),
                                          np.random.default_rng(seed))
        assert np.all(lo < t) and np.all(t < hi)


def _log_row(i, p, d, converged=True):
    row = {k: 0.0 for k in LOG_FIELDS}
    row.update(replicate=i, converged=converged, nie_product=p, nie_difference=d, total_difference=0.7,
               tau_a=0.7)
    return row


class TestSummaries:
    def test_metric_formulas(self):
        sc = SimScenario.weibull(replicates=4)
        log = [_log_row(0, 0.2, 0.1), _log_row(1, 0.16, 0.12), _log_row(2, 0.18, 0.08),
               _log_row(3, math.nan, math.nan, converged=False)]
        s = summarize_log(sc, log)
        assert s.replicate_count == 3 and s.nonconverged_count == 1
        assert s.mean_nie_product == pytest.approx(0.18)
        assert s.mean_nie_difference == pytest.approx(0.1)
        assert s.abs_prop_difference == pytest.approx(0.08 / 0.18)
        assert s.prop_bias_product == pytest.approx(0.0, abs=1e-12)
        assert s.prop_bias_difference == pytest.approx(0.08 / 0.18)
        assert s.var_nie_product == pytest.approx(np.var([0.2, 0.16, 0.18], ddof=1))
        assert s.mean_tau_bias == pytest.approx(0.7 - 0.68)
        assert s.mean_abs_prop_difference == pytest.approx(np.mean([0.5, 0.25, 10 / 18]))

    def test_run_is_deterministic(self):
        sc = SimScenario.normal(Censoring("right", 0.7), n=200, replicates=6)
        a, b = run(sc), run(sc)
        assert a.log == b.log and a.summary == b.summary

    def test_run_worker_count_does_not_matter(self):
        sc = SimScenario.weibull(Censoring("right", 0.3), n=200, replicates=6)
        assert run(sc, workers=1).log == run(sc, workers=2).log

    def test_nonconvergence_limit(self):
        sc = SimScenario.weibull(n=30, replicates=3, outcome_coeffs=(4, 0.5, -0.6))
        with pytest.raises(SimulationError):
            run(sc, max_nonconverged=-1.0)

    def test_uncensored_normal_difference_is_zero(self):
        s = run(SimScenario.normal(n=800, replicates=100)).summary
        assert s.abs_prop_difference < 1e-8 and s.max_abs_difference < 1e-8

    def test_uncensored_normal_truth_recovery(self):
        s = run(SimScenario.normal(n=4000, replicates=300, seed=12)).summary
        assert s.prop_bias_product < 0.02 and s.prop_bias_difference < 0.02


@pytest.fixture(scope="module")
def results():
    return [run(SimScenario.weibull(n=n, replicates=8)) for n in (200, 400)]


class TestOutput:
    def test_one_row_per_metric(self, results, tmp_path):
        emit_figure_data([results[0].summary], tmp_path)
        with open(tmp_path / "summary.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["metric"] for r in rows] == list(SimSummary.METRICS)
        assert set(rows[0]) == {"scenario", "law", "censoring", "n", "metric", "value"}

    def test_figure_files(self, results, tmp_path):
        paths = emit_figure_data([r.summary for r in results], tmp_path)
        assert sorted(p.name for p in paths) == ["summary.csv", "variances.csv", "weibull_metrics.csv"]
        with open(tmp_path / "variances.csv", newline="") as fh:
            values = [float(r["value"]) for r in csv.DictReader(fh)]
        assert all(v > 0 for v in values)

    def test_values_round_trip_exactly(self, results, tmp_path):
        emit_figure_data([results[0].summary], tmp_path)
        with open(tmp_path / "summary.csv", newline="") as fh:
            row = next(r for r in csv.DictReader(fh) if r["metric"] == "mean_nie_product")
        assert float(row["value"]) == results[0].summary.mean_nie_product

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_figure_data([], tmp_path)

    def test_replicate_log(self, results, tmp_path):
        path = write_replicate_log(results[0], tmp_path / "log.csv")
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8 and tuple(rows[0]) == LOG_FIELDS


class TestScenarioFiles:
    def test_bare_file(self, tmp_path):
        path = tmp_path / "s.cfg"
        path.write_text("preset = weibull\ncensoring = right\ncensor_fraction = 0.3\nn = 800, 4000\n"
                        "replicates = 50\n")
        scenarios = read_scenarios(path)
        assert [s.n for s in scenarios] == [800, 4000]
        assert scenarios[0].censoring == Censoring("right", 0.3) and scenarios[0].replicates == 50

    def test_sections_and_overrides(self, tmp_path):
        path = tmp_path / "s.cfg"
        path.write_text("[a]\npreset = normal\ncensoring = right_interval\ncensor_fraction = 0.7\n"
                        "interval_lengths = 1, 2\ninterval_probs = 0.5, 0.5\n\n"
                        "[b]\npreset = weibull\nmediator_coeffs = 0, -0.5\nseed = 9\n")
        a, b = read_scenarios(path)
        assert a.name == "a" and a.censoring.interval_lengths == (1.0, 2.0)
        assert b.mediator_coeffs == (0.0, -0.5) and b.seed == 9 and b.ie_truth == pytest.approx(0.3)

    def test_leading_comment_before_sections(self, tmp_path):
        path = tmp_path / "s.cfg"
        path.write_text("# two scenarios\n[a]\npreset = weibull\n[b]\npreset = normal\n")
        assert [s.name for s in read_scenarios(path)] == ["a", "b"]

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "s.cfg"
        path.write_text("preset = weibull\nwidgets = 3\n")
        with pytest.raises(ValueError, match="widgets"):
            read_scenarios(path)


def test_interval_kind_counts_match_status():
    ds = generate(SimScenario.normal(Censoring("right_interval", 0.7), n=500), 1)
    assert np.all(ds.time1[ds.status == INTERVAL] < ds.time2[ds.status == INTERVAL])
