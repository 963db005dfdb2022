"""End-to-end acceptance checks, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per
criterion is printed in the terminal summary.  Simulation runs are cached for
the module so scenarios shared between criteria are simulated once.
"""

import functools
import json
import math
from dataclasses import replace

import numpy as np
from scipy import integrate as sp_integrate
from scipy import stats

from aftmediation import cli
from aftmediation.aft import AftSpec, fit, loglik, score
from aftmediation.distributions import Convolved, ExtremeValueMin, StandardNormal
from aftmediation.mediation import BootstrapConfig, bootstrap
from aftmediation.score_oracle import (
    ScoreBiasConfig,
    expected_score_left_truncation,
    expected_score_right_censoring,
    expected_scores,
    mle_limit_probe,
    weibull_scenario_config,
)
from aftmediation.simulate import (
    Censoring,
    SimScenario,
    emit_figure_data,
    generate,
    run,
)
from aftmediation.survdata import Dataset, summarize, write_csv

REPLICATES = 1000
SIZES = (800, 4000)
TOL = 1e-10


def criterion(label):
    def mark(fn):
        fn.criterion = label
        return fn
    return mark


@functools.lru_cache(maxsize=None)
def simulate(scenario):
    return run(scenario).summary


def normal(kind="none", n=800, **kw):
    cens = Censoring(kind, 0.7) if kind != "none" else Censoring()
    return SimScenario.normal(cens, n=n, replicates=REPLICATES, **kw)


def weibull(kind="none", n=800, **kw):
    cens = Censoring(kind, 0.3) if kind != "none" else Censoring()
    return SimScenario.weibull(cens, n=n, replicates=REPLICATES, **kw)


def _fmt(x):
    return f"{x:.4g}"


@criterion("1 uncensored equivalence")
def test_uncensored_equivalence(record_property):
    worst = 0.0
    for n in SIZES:
        sc = SimScenario.normal(n=n, replicates=100)
        summary = run(sc).summary
        assert summary.replicate_count == 100
        worst = max(worst, summary.max_abs_difference)
    record_property("measured", f"max |p - d| = {worst:.3g}")
    assert worst < 1e-8


@criterion("2 normal consistency under censoring")
def test_normal_censored_consistency(record_property):
    ok = True
    for kind in ("right", "right_interval"):
        small, large = simulate(normal(kind, 800)), simulate(normal(kind, 4000))
        record_property("measured", f"{kind}: bias_p={_fmt(large.prop_bias_product)} "
                                    f"bias_d={_fmt(large.prop_bias_difference)} "
                                    f"apd800={_fmt(small.abs_prop_difference)} apd4000={_fmt(large.abs_prop_difference)}")
        ok &= large.prop_bias_product < 0.02 and large.prop_bias_difference < 0.02
        ok &= large.abs_prop_difference < 0.02 and large.abs_prop_difference < small.abs_prop_difference
    assert ok


@criterion("3 Weibull difference-method inconsistency")
def test_weibull_difference_inconsistency(record_property):
    small, large = simulate(weibull("right", 800)), simulate(weibull("right", 4000))
    record_property("measured", f"bias_p4000={_fmt(large.prop_bias_product)} "
                                f"bias_d800={_fmt(small.prop_bias_difference)} "
                                f"bias_d4000={_fmt(large.prop_bias_difference)} "
                                f"censored={_fmt(large.mean_right_fraction)}")
    assert large.prop_bias_product < 0.03
    assert 0.30 <= small.prop_bias_difference <= 0.60
    assert 0.30 <= large.prop_bias_difference <= 0.60
    assert abs(large.prop_bias_difference - small.prop_bias_difference) < 0.10


@criterion("4 Weibull no-censoring consistency")
def test_weibull_uncensored_consistency(record_property):
    small, large = simulate(weibull("none", 800)), simulate(weibull("none", 4000))
    record_property("measured", f"bias_p4000={_fmt(large.prop_bias_product)} "
                                f"bias_d4000={_fmt(large.prop_bias_difference)} "
                                f"apd800={_fmt(small.abs_prop_difference)} apd4000={_fmt(large.abs_prop_difference)}")
    assert large.prop_bias_difference < 0.05
    assert large.prop_bias_product < 0.03
    assert large.abs_prop_difference < small.abs_prop_difference


@criterion("5 variance decay")
def test_variance_decay(record_property):
    pairs = {
        "normal/none": (normal("none", 800), normal("none", 4000)),
        "normal/right70": (normal("right", 800), normal("right", 4000)),
        "normal/right_interval70": (normal("right_interval", 800), normal("right_interval", 4000)),
        "weibull/none": (weibull("none", 800), weibull("none", 4000)),
        "weibull/right30": (weibull("right", 800), weibull("right", 4000)),
    }
    failures = []
    worst = 0.0
    for name, (a, b) in pairs.items():
        sa, sb = simulate(a), simulate(b)
        for metric in ("var_nie_product", "var_nie_difference", "var_total_reduced"):
            ratio = getattr(sb, metric) / getattr(sa, metric)
            worst = max(worst, ratio)
            if not getattr(sb, metric) < getattr(sa, metric):
                failures.append(f"{name}:{metric}")
    record_property("measured", f"largest var(4000)/var(800) = {worst:.3f}")
    assert not failures, failures


@criterion("6 score-oracle boundary zeros")
def test_score_oracle_boundaries(record_property):
    no_cens = weibull_scenario_config(censor_quantile=None)
    median = weibull_scenario_config(censor_quantile=0.5)
    checks = {
        "C=inf": expected_score_right_censoring(no_cens, TOL).expected_score_beta,
        "V=0": expected_score_left_truncation(no_cens, TOL).expected_score_beta,
        "beta=0": expected_score_right_censoring(
            replace(median, true_params=(4.0, 0.0), probe_params=(4.0, 0.0)), TOL).expected_score_beta,
    }
    for law in (ExtremeValueMin(), StandardNormal()):
        cfg = ScoreBiasConfig(true_law=law, assumed_law=law, true_params=(4.0, 0.68), true_scale=0.25)
        checks[f"{law.name} C"] = expected_score_right_censoring(replace(cfg, censor_time=60.0), TOL).expected_score_beta
        checks[f"{law.name} V"] = expected_score_left_truncation(replace(cfg, truncation_time=40.0),
                                                                 TOL).expected_score_beta
        checks[f"{law.name} C+V"] = expected_scores(replace(cfg, censor_time=60.0, truncation_time=40.0),
                                                    TOL).expected_score_beta
    misspecified = expected_score_right_censoring(median, TOL)
    worst = max(abs(v) for v in checks.values())
    record_property("measured", f"max boundary |E U| = {worst:.3g}; misspecified median-C = "
                                f"{misspecified.expected_score_beta:.4g}")
    assert worst < 1e-8
    assert abs(misspecified.expected_score_beta) > 10 * TOL


@criterion("7 cross-module asymptotic bias")
def test_probe_matches_simulation(record_property):
    cfg = weibull_scenario_config(censor_quantile=0.7)
    probe = mle_limit_probe(cfg)
    sc = SimScenario.weibull(Censoring("fixed", censor_time=cfg.censor_time), n=4000, replicates=REPLICATES)
    summary = simulate(sc)
    gap = summary.mean_tau_bias - probe.beta_bias
    record_property("measured", f"oracle={probe.beta_bias:.5f} simulated={summary.mean_tau_bias:.5f} "
                                f"MC se={summary.se_mean_tau:.5f} censored={summary.mean_right_fraction:.3f}")
    assert abs(gap) < 3 * summary.se_mean_tau


def _mixed(rng, law_scale, n=60):
    t = np.exp(rng.normal(1.0, 0.6, n)) if law_scale == "log" else rng.uniform(2, 6, n)
    kind = rng.integers(0, 3, n)
    kind[0] = 0
    width = rng.uniform(0.1, 1.0, n)
    t2 = np.where(kind == 0, t, np.where(kind == 1, np.nan, t + width))
    entry = np.where(rng.random(n) < 0.4, t * 0.5, np.nan)
    return Dataset.from_arrays(t, t2, rng.integers(0, 2, n), rng.normal(size=n), rng.normal(size=(n, 1)), ["z"],
                               entry)


@criterion("8 numerical core")
def test_numerical_core(record_property):
    rng = np.random.default_rng(8)
    worst = 0.0
    for law in (StandardNormal(), ExtremeValueMin()):
        for time_scale in ("log", "identity"):
            ds = _mixed(rng, time_scale)
            spec = AftSpec(law, time_scale=time_scale)
            theta = np.array([1.0 if time_scale == "log" else 4.0, 0.2, -0.1, 0.1, -0.3])
            analytic = score(spec, theta, ds)
            h = 1e-6
            fd = np.array([(loglik(spec, theta + h * e, ds) - loglik(spec, theta - h * e, ds)) / (2 * h)
                           for e in np.eye(5)])
            rel = np.abs(analytic - fd) / np.maximum(np.abs(fd), 1e-3 * np.max(np.abs(fd)))
            worst = max(worst, float(rel.max()))
    ds = generate(SimScenario.normal(n=1000), 0)
    res = fit(AftSpec(StandardNormal(), time_scale="identity"), ds)
    X = np.column_stack([np.ones(ds.n), ds.exposure, ds.mediator])
    beta, *_ = np.linalg.lstsq(X, ds.time1, rcond=None)
    ols_gap = float(np.max(np.abs(res.coefficients - beta)))
    conv = Convolved(0.25, -0.6)
    lo, hi = conv.support_bounds()
    mass, _ = sp_integrate.quad_vec(conv.pdf, lo, hi, epsabs=1e-11)
    nn = Convolved(1.0, 1.0, 1.0, StandardNormal())
    x = np.linspace(-4, 4, 17)
    nn_gap = float(np.max(np.abs(nn.pdf(x) - stats.norm.pdf(x, scale=math.sqrt(2)))))
    record_property("measured", f"score rel err={worst:.2g} OLS gap={ols_gap:.2g} "
                                f"mass-1={mass - 1:.2g} normal conv gap={nn_gap:.2g}")
    assert worst < 1e-5
    assert ols_gap < 1e-6
    assert abs(mass - 1) < 1e-8
    assert nn_gap < 1e-8


@criterion("9 reproducibility")
def test_reproducibility(tmp_path, record_property):
    sc = SimScenario.normal(Censoring("right_interval", 0.7), n=300, replicates=16)
    files = []
    for name, workers in (("a", 1), ("b", 1), ("c", 2)):
        out = tmp_path / name
        emit_figure_data([run(sc, workers=workers).summary], out)
        files.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    data = generate(SimScenario.weibull(Censoring("right", 0.3), n=300), 0)
    ses = [bootstrap(data, "weibull", BootstrapConfig(replicates=16, seed=4, workers=w)).se for w in (1, 1, 2)]
    record_property("measured", f"{len(files[0])} CSVs and {len(ses[0])} bootstrap SEs compared across runs")
    assert files[0] == files[1] == files[2]
    assert ses[0] == ses[1] == ses[2]


@criterion("T tables substitute (72% right, 28% interval)")
def test_tables_substitute(tmp_path, record_property, capsys):
    ds = generate(SimScenario.normal(Censoring("right_interval", 0.72), n=1500, seed=5), 0)
    s = summarize(ds)
    path = tmp_path / "cohort.csv"
    write_csv(ds, path)
    out = tmp_path / "effects.json"
    code = cli.main(["mediate", "--data", str(path), "--law", "normal", "--time-scale", "identity",
                     "--bootstrap", "100", "--seed", "1", "--out", str(out)])
    capsys.readouterr()
    assert code == 0
    res = json.loads(out.read_text())
    record_property("measured", f"right={s.right_fraction:.3f} interval={s.interval_fraction:.3f} "
                                f"nie_p={res['nie_product']:.4f} nie_d={res['nie_difference']:.4f}")
    assert abs(s.right_fraction - 0.72) < 0.03 and abs(s.interval_fraction - 0.28) < 0.03
    assert abs(res["total_product"] - (res["nde"] + res["nie_product"])) <= 1e-12
    assert abs(res["nie_difference"] - (res["total_difference"] - res["nde"])) <= 1e-12
    assert len(res["table"]) == 5 and res["se_nie_difference"] > 0 and res["se_total_product"] > 0
