import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aftmediation.aft import FitError
from aftmediation.mediation import (
    ESTIMANDS,
    BootstrapConfig,
    BootstrapError,
    analyze,
    bootstrap,
    bootstrap_statistic,
    delta_se_product,
    difference_nie,
    nde,
    point_estimates,
    product_nie,
)
from aftmediation.simulate import Censoring, SimScenario, generate, run
from aftmediation.survdata import Dataset


class _Fit:
    """Minimal stand-in exposing the coefficient accessors the effect functions use."""

    def __init__(self, coef, var=None):
        self._coef = dict(coef)
        self._var = dict(var or {})
        self.names = tuple(["(Intercept)"] + list(self._coef))

    def coef(self, name):
        return self._coef[name]

    def var(self, name):
        return self._var[name]


def _full(beta_a, beta_m=0.0, **var):
    return _Fit({"exposure": beta_a, "mediator": beta_m}, var)


class TestArithmetic:
    def test_product_normal_truth(self):
        assert product_nie(_Fit({"exposure": -0.5}), _full(4.0, -4.0)) == 2.0

    def test_product_weibull_truth(self):
        assert product_nie(_Fit({"exposure": -0.3}), _full(0.5, -0.6)) == pytest.approx(0.18, abs=1e-15)

    def test_product_null_mediator(self):
        assert product_nie(_Fit({"exposure": 7.3}), _full(1.0, 0.0)) == 0.0

    def test_product_requires_mediator(self):
        with pytest.raises(ValueError, match="mediator"):
            product_nie(_Fit({"exposure": 1.0}), _Fit({"exposure": 1.0}))

    @pytest.mark.parametrize("tau, beta, expected", [(7.04, 4.14, 2.90), (0.70, 0.48, 0.22), (1.5, 1.5, 0.0)])
    def test_difference(self, tau, beta, expected):
        assert difference_nie(_Fit({"exposure": tau}), _full(beta)) == pytest.approx(expected, abs=1e-12)

    def test_difference_design_mismatch(self):
        reduced = _Fit({"exposure": 1.0, "age": 0.1})
        with pytest.raises(ValueError, match="design mismatch"):
            difference_nie(reduced, _full(0.5))

    @pytest.mark.parametrize("beta, contrast, expected", [(4.14, (1, 0), 4.14), (4.14, (1, 1), 0.0),
                                                          (0.48, (0, 1), -0.48)])
    def test_nde(self, beta, contrast, expected):
        assert nde(_full(beta), contrast) == pytest.approx(expected, abs=1e-15)

    def test_delta_se(self):
        med = _Fit({"exposure": 1.0}, {"exposure": 0.01})
        assert delta_se_product(med, _full(0.0, 2.0, mediator=0.04)) == pytest.approx(math.sqrt(0.08), rel=1e-15)
        assert delta_se_product(med, _full(0.0, 2.0, mediator=0.04)) == pytest.approx(0.2828, abs=1e-4)

    def test_delta_se_zero_paths(self):
        med = _Fit({"exposure": 0.0}, {"exposure": 0.3})
        assert delta_se_product(med, _full(1.0, 0.0, mediator=0.5)) == 0.0


@pytest.fixture(scope="module")
def weibull_censored():
    return generate(SimScenario.weibull(Censoring("right", 0.3), n=600, seed=31), 0)


class TestAnalyze:
    def test_identities(self, weibull_censored):
        est = analyze(weibull_censored, "weibull")
        assert abs(est.total_product - (est.nde + est.nie_product)) <= 1e-12
        assert abs(est.nie_difference - (est.total_difference - est.nde)) <= 1e-12
        assert est.total_difference_flagged
        assert est.total == est.total_product

    def test_contrast_antisymmetry(self, weibull_censored):
        fwd = analyze(weibull_censored, "weibull", contrast=(1, 0))
        rev = analyze(weibull_censored, "weibull", contrast=(0, 1))
        for key in ESTIMANDS:
            assert rev.estimate(key) == -fwd.estimate(key)

    def test_null_contrast(self, weibull_censored):
        est = analyze(weibull_censored, "weibull", contrast=(1, 1))
        assert all(est.estimate(k) == 0 for k in ESTIMANDS)

    def test_covariate_shift_invariance(self):
        ds = generate(SimScenario.weibull(Censoring("right", 0.3), n=500, seed=4), 0)
        z = np.random.default_rng(0).normal(size=(ds.n, 2))
        base = analyze(ds.replace(covariates=z, covariate_names=("z1", "z2")), "weibull")
        moved = analyze(ds.replace(covariates=z + [5.0, -3.0], covariate_names=("z1", "z2")), "weibull")
        for key in ESTIMANDS:
            assert moved.estimate(key) == pytest.approx(base.estimate(key), abs=1e-8)

    @pytest.mark.parametrize("n", [50, 800, 4000])
    def test_uncensored_normal_product_equals_difference(self, n):
        ds = generate(SimScenario.normal(n=n, seed=n), 0)
        est = analyze(ds, "normal", time_scale="identity")
        assert abs(est.nie_product - est.nie_difference) < 1e-8
        assert not est.total_difference_flagged

    def test_uncensored_normal_with_covariates_on_log_scale(self):
        rng = np.random.default_rng(12)
        n = 300
        a = rng.integers(0, 2, n).astype(float)
        z = rng.normal(size=(n, 1))
        m = 0.4 * a + 0.3 * z[:, 0] + rng.normal(size=n)
        t = np.exp(1 + 0.2 * a - 0.3 * m + 0.1 * z[:, 0] + 0.5 * rng.normal(size=n))
        est = analyze(Dataset.from_arrays(t, None, a, m, z, ["z"]), "normal")
        assert abs(est.nie_product - est.nie_difference) < 1e-8

    def test_table_rows(self, weibull_censored):
        rows = analyze(weibull_censored, "weibull").table()
        assert [r["key"] for r in rows] == list(ESTIMANDS)
        by_key = {r["key"]: r for r in rows}
        assert by_key["nde"]["exp_estimate"] == pytest.approx(math.exp(by_key["nde"]["estimate"]))
        assert by_key["total_difference"]["note"]
        lo, hi = by_key["nie_product"]["ci_lower"], by_key["nie_product"]["ci_upper"]
        assert hi - lo == pytest.approx(2 * 1.959963984540054 * by_key["nie_product"]["se"], rel=1e-12)

    def test_rank_deficient_dataset_errors(self):
        ds = Dataset.from_arrays(np.full(20, 3.0), None, np.ones(20), np.full(20, 0.5))
        with pytest.raises(FitError):
            analyze(ds, "weibull")

    def test_null_mediator_path(self):
        sc = SimScenario.weibull(n=4000, mediator_coeffs=(0.0, 0.0), replicates=100, seed=8)
        res = run(sc)
        for col in ("nie_product", "nie_difference"):
            x = res.column(col)
            assert abs(x.mean()) < 3 * x.std(ddof=1) / math.sqrt(x.size) + 1e-12


class TestBootstrap:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            BootstrapConfig(replicates=1)
        assert not BootstrapConfig(replicates=500).percentile_ci_available
        assert BootstrapConfig(replicates=800).percentile_ci_available

    def test_identical_subjects_give_zero_se(self):
        ds = Dataset.from_arrays(np.full(30, 2.0), None, np.ones(30), np.full(30, 0.25))
        draws, dropped = bootstrap_statistic(lambda d: [d.time1.mean(), d.mediator.std()], ds, BootstrapConfig(50))
        assert dropped == 0
        assert np.all(draws.std(axis=0, ddof=1) == 0)

    def test_same_seed_bit_identical(self, weibull_censored):
        cfg = BootstrapConfig(replicates=20, seed=5)
        a = bootstrap(weibull_censored, "weibull", cfg)
        b = bootstrap(weibull_censored, "weibull", cfg)
        assert a.se == b.se
        assert np.array_equal(a.draws, b.draws)

    def test_worker_count_does_not_change_draws(self, weibull_censored):
        a = bootstrap(weibull_censored, "weibull", BootstrapConfig(replicates=12, seed=3, workers=1))
        b = bootstrap(weibull_censored, "weibull", BootstrapConfig(replicates=12, seed=3, workers=2))
        assert np.array_equal(a.draws, b.draws)

    def test_too_many_failures_raise(self):
        ds = Dataset.from_arrays(np.arange(1.0, 11.0))
        with pytest.raises(BootstrapError, match="failed"):
            bootstrap_statistic(lambda d: None, ds, BootstrapConfig(10))

    def test_percentile_interval_brackets_estimate(self, weibull_censored):
        res = bootstrap(weibull_censored, "weibull", BootstrapConfig(replicates=800, seed=1))
        est = point_estimates(weibull_censored, "weibull")
        for key in ESTIMANDS:
            lo, hi = res.percentile_ci[key]
            assert lo < est[key] < hi

    def test_two_seeds_agree(self, weibull_censored):
        a = bootstrap(weibull_censored, "weibull", BootstrapConfig(replicates=500, seed=1))
        b = bootstrap(weibull_censored, "weibull", BootstrapConfig(replicates=500, seed=2))
        for key in ESTIMANDS:
            assert abs(a.se[key] / b.se[key] - 1) < 0.15


class TestMonteCarloCalibration:
    def test_delta_se_matches_monte_carlo_sd(self):
        summary = run(SimScenario.normal(n=4000, replicates=1000, seed=77)).summary
        assert abs(summary.mean_se_nie_product / math.sqrt(summary.var_nie_product) - 1) < 0.15

    def test_bootstrap_se_matches_monte_carlo_sd(self):
        scenario = SimScenario.normal(Censoring("right", 0.7), n=800, replicates=1000, seed=78)
        mc_sd = math.sqrt(run(scenario).summary.var_nie_difference)
        boot = bootstrap(generate(scenario, 0), "normal", BootstrapConfig(replicates=500, seed=9),
                         time_scale="identity")
        assert abs(boot.se["nie_difference"] / mc_sd - 1) < 0.20


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2), st.floats(0.01, 1), st.floats(0.01, 1))
def test_delta_se_nonnegative_and_scales_with_contrast(alpha, beta, k, va, vb):
    med = _Fit({"exposure": alpha}, {"exposure": va})
    full = _full(0.0, beta, mediator=vb)
    base = delta_se_product(med, full)
    assert base >= 0
    assert delta_se_product(med, full, (k, 0.0)) == pytest.approx(abs(k) * base, rel=1e-12, abs=1e-300)
