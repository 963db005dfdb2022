"""Monte Carlo studies of the product and difference mediation estimators.

Data are generated as

    A ~ Bernoulli(p)
    M = a0 + a_a A + xi,                   xi ~ N(0, mediator_sd**2)
    g(T) = b0 + b_a A + b_m M + sigma eps, eps ~ outcome law

with ``g = log`` (Weibull scenario, extreme-value ``eps``) or ``g`` the
identity (normal scenario).  Censoring is applied afterwards.  Each replicate
draws from its own stream ``SeedSequence(seed, spawn_key=(replicate,))``, so a
run is bit-identical regardless of how replicates are spread over workers.
"""

from __future__ import annotations

import csv
import functools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ._ini import parse_ini
from .aft import FitError
from .distributions import ErrorLaw, law_from_name
from .mediation import analyze
from .survdata import INTERVAL, RIGHT, Dataset, DataValidationError

__all__ = [
    "Censoring",
    "SimScenario",
    "SimSummary",
    "SimResult",
    "CalibrationError",
    "SimulationError",
    "generate",
    "apply_right_censoring",
    "apply_interval_censoring",
    "calibrate_censoring",
    "run",
    "summarize_log",
    "emit_figure_data",
    "read_scenarios",
]

PILOT_SIZE = 1_000_000
CALIBRATION_TOLERANCE = 0.02
MAX_NONCONVERGED_FRACTION = 0.01
_PILOT_KEY = (2**32 - 1, 1)  # spawn key reserved for calibration pilots


class CalibrationError(RuntimeError):
    pass


class SimulationError(RuntimeError):
    def __init__(self, message: str, result: SimResult | None = None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class Censoring:
    """Censoring scheme.

    kind : ``"none"``, ``"right"`` (random right censoring calibrated to
        ``fraction``), ``"right_interval"`` (right censoring, then the
        remaining exact times are interval censored) or ``"fixed"`` (a single
        administrative censoring time ``censor_time``; when that is ``None``
        it is set to the ``1 - fraction`` quantile of the outcome).
    interval_lengths, interval_probs : categorical law of interval lengths,
        in time units.  A zero length leaves the time exact.
    """

    kind: str = "none"
    fraction: float = 0.0
    interval_lengths: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    interval_probs: tuple[float, ...] = (0.25, 0.4, 0.25, 0.1)
    censor_time: float | None = None

    KINDS = ("none", "right", "right_interval", "fixed")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"censoring kind must be one of {self.KINDS}, got {self.kind!r}")
        object.__setattr__(self, "interval_lengths", tuple(float(v) for v in self.interval_lengths))
        object.__setattr__(self, "interval_probs", tuple(float(v) for v in self.interval_probs))
        if self.kind in ("right", "right_interval") or (self.kind == "fixed" and self.censor_time is None):
            if not 0 < self.fraction < 1:
                raise ValueError(f"target censoring fraction must be in (0, 1), got {self.fraction}")
        if self.censor_time is not None and not self.censor_time > 0:
            raise ValueError("censor_time must be positive")
        if len(self.interval_lengths) != len(self.interval_probs):
            raise ValueError("interval_lengths and interval_probs differ in length")
        if any(v < 0 for v in self.interval_lengths):
            raise ValueError("interval lengths must be nonnegative")
        if any(p < 0 for p in self.interval_probs) or not math.isclose(sum(self.interval_probs), 1.0, abs_tol=1e-9):
            raise ValueError("interval_probs must be nonnegative and sum to 1")

    @property
    def label(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "fixed" and self.censor_time is not None:
            return f"fixed@{self.censor_time:.6g}"
        return f"{self.kind}{round(100 * self.fraction)}"


@dataclass(frozen=True)
class SimScenario:
    """A complete data-generating process plus Monte Carlo settings."""

    name: str
    law: str = "weibull"
    mediator_coeffs: tuple[float, float] = (0.0, -0.3)
    mediator_sd: float = 1.0
    outcome_coeffs: tuple[float, float, float] = (4.0, 0.5, -0.6)
    scale: float = 0.25
    exposure_prob: float = 0.5
    time_scale: str = "log"
    censoring: Censoring = field(default_factory=Censoring)
    n: int = 800
    replicates: int = 1000
    seed: int = 2024

    def __post_init__(self):
        object.__setattr__(self, "mediator_coeffs", tuple(float(v) for v in self.mediator_coeffs))
        object.__setattr__(self, "outcome_coeffs", tuple(float(v) for v in self.outcome_coeffs))
        law_from_name(self.law)
        if len(self.mediator_coeffs) != 2 or len(self.outcome_coeffs) != 3:
            raise ValueError("mediator_coeffs needs (a0, a_a); outcome_coeffs needs (b0, b_a, b_m)")
        if not self.mediator_sd > 0 or not self.scale > 0:
            raise ValueError("mediator_sd and scale must be positive")
        if not 0 < self.exposure_prob < 1:
            raise ValueError("exposure_prob must be in (0, 1)")
        if self.time_scale not in ("log", "identity"):
            raise ValueError("time_scale must be 'log' or 'identity'")
        if self.n < 2 or self.replicates < 1:
            raise ValueError("need n >= 2 and replicates >= 1")

    @classmethod
    def normal(cls, censoring: Censoring | None = None, **kw) -> SimScenario:
        """Normal outcome on the time scale: ``T = 180 + 4A - 4M + eps``."""
        base = dict(name="normal", law="normal", mediator_coeffs=(0.0, -0.5), mediator_sd=1.0,
                    outcome_coeffs=(180.0, 4.0, -4.0), scale=1.0, exposure_prob=0.5, time_scale="identity",
                    censoring=censoring or Censoring())
        base.update(kw)
        return cls(**base)

    @classmethod
    def weibull(cls, censoring: Censoring | None = None, **kw) -> SimScenario:
        """Weibull outcome: ``log T = 4 + 0.5A - 0.6M + 0.25 eps`` with extreme-value ``eps``."""
        base = dict(name="weibull", law="weibull", mediator_coeffs=(0.0, -0.3), mediator_sd=1.0,
                    outcome_coeffs=(4.0, 0.5, -0.6), scale=0.25, exposure_prob=0.5, time_scale="log",
                    censoring=censoring or Censoring())
        base.update(kw)
        return cls(**base)

    @property
    def outcome_law(self) -> ErrorLaw:
        return law_from_name(self.law)

    @property
    def ie_truth(self) -> float:
        """True natural indirect effect for the contrast (1, 0)."""
        return self.mediator_coeffs[1] * self.outcome_coeffs[2]

    @property
    def tau_truth(self) -> float:
        """Exposure coefficient of the marginal (mediator-free) model."""
        return self.outcome_coeffs[1] + self.ie_truth

    @property
    def label(self) -> str:
        return f"{self.name}/{self.censoring.label}"

    def _generation_key(self):
        return (self.law, self.mediator_coeffs, self.mediator_sd, self.outcome_coeffs, self.scale,
                self.exposure_prob, self.time_scale, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["censoring"] = asdict(self.censoring)
        return d


def _rng(seed: int, key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def _draw_uncensored(scenario: SimScenario, rng: np.random.Generator, n: int):
    a0, a_a = scenario.mediator_coeffs
    b0, b_a, b_m = scenario.outcome_coeffs
    exposure = (rng.random(n) < scenario.exposure_prob).astype(float)
    mediator = a0 + a_a * exposure + scenario.mediator_sd * rng.standard_normal(n)
    eps = scenario.outcome_law.sample(rng, n)
    y = b0 + b_a * exposure + b_m * mediator + scenario.scale * eps
    times = np.exp(y) if scenario.time_scale == "log" else y
    return exposure, mediator, times


def _censor_noise(scenario: SimScenario, rng: np.random.Generator, n: int, outcome_sd: float) -> np.ndarray:
    # shape of the censoring law: same family and spread as the outcome
    if scenario.time_scale == "log":
        return scenario.scale * scenario.outcome_law.sample(rng, n)
    return outcome_sd * rng.standard_normal(n)


def _censor_from_location(scenario: SimScenario, location: float, noise: np.ndarray) -> np.ndarray:
    if scenario.time_scale == "log":
        return np.exp(location + noise)
    return location + noise


@dataclass(frozen=True)
class CensoringCalibration:
    """Calibrated censoring law: ``g(C) = location + noise``, or a fixed ``C``."""

    kind: str
    location: float
    outcome_sd: float
    pilot_fraction: float
    censor_time: float | None = None


@functools.lru_cache(maxsize=64)
def _calibrate(key, censoring: Censoring, scenario: SimScenario) -> CensoringCalibration:
    rng = _rng(scenario.seed, _PILOT_KEY)
    _, _, t = _draw_uncensored(scenario, rng, PILOT_SIZE)
    y = np.log(t) if scenario.time_scale == "log" else t
    outcome_sd = float(np.std(t))
    target = censoring.fraction
    if censoring.kind == "fixed":
        c = float(censoring.censor_time) if censoring.censor_time is not None else float(np.quantile(t, 1 - target))
        achieved = float(np.mean(t > c))
        if censoring.censor_time is None and abs(achieved - target) > CALIBRATION_TOLERANCE:
            raise CalibrationError(f"fixed censoring time reaches {achieved:.3f}, target {target:.3f}")
        return CensoringCalibration("fixed", math.nan, outcome_sd, achieved, c)
    noise = _censor_noise(scenario, rng, PILOT_SIZE, outcome_sd)
    # P(y > loc + noise) = target  <=>  loc is the (1 - target) quantile of y - noise
    location = float(np.quantile(y - noise, 1 - target))
    achieved = float(np.mean(y > location + noise))
    if abs(achieved - target) > CALIBRATION_TOLERANCE:
        raise CalibrationError(f"censoring calibration reaches {achieved:.3f}, target {target:.3f}")
    return CensoringCalibration(censoring.kind, location, outcome_sd, achieved)


def calibrate_censoring(scenario: SimScenario) -> CensoringCalibration | None:
    """Censoring-law parameters hitting the scenario's target fraction on a pilot sample.

    The pilot is ``PILOT_SIZE`` draws from a stream reserved for calibration,
    so every replicate of a run shares one censoring law.
    """
    if scenario.censoring.kind == "none":
        return None
    return _calibrate(scenario._generation_key(), scenario.censoring, replace(scenario, name="", n=2, replicates=1))


def apply_right_censoring(times: np.ndarray, censor_times: np.ndarray):
    """Observed ``(time1, time2)``: exact when ``t <= c``, else right-censored at ``c``."""
    times = np.asarray(times, dtype=float)
    censor_times = np.broadcast_to(np.asarray(censor_times, dtype=float), times.shape)
    censored = times > censor_times
    time1 = np.where(censored, censor_times, times)
    time2 = np.where(censored, np.nan, times)
    return time1, time2


def apply_interval_censoring(time1: np.ndarray, time2: np.ndarray, lengths, probs, rng: np.random.Generator,
                             floor: float = 1e-8):
    """Replace exact times by ``(t - U L, t + (1 - U) L)`` with categorical ``L``.

    Right-censored rows (``time2`` NaN) are untouched; rows drawing ``L = 0``
    stay exact.  ``U`` is drawn strictly inside ``(0, 1)``.
    """
    time1 = np.array(time1, dtype=float)
    time2 = np.array(time2, dtype=float)
    exact = ~np.isnan(time2) & (time1 == time2)
    k = int(exact.sum())
    lengths = np.asarray(lengths, dtype=float)
    L = lengths[rng.choice(len(lengths), size=k, p=np.asarray(probs, dtype=float))]
    U = (rng.integers(0, 2**53, size=k) + 0.5) / 2.0**53
    t = time1[exact]
    lo = np.maximum(t - U * L, floor)
    hi = t + (1 - U) * L
    keep = L > 0
    time1[np.flatnonzero(exact)[keep]] = lo[keep]
    time2[np.flatnonzero(exact)[keep]] = hi[keep]
    return time1, time2


def generate(scenario: SimScenario, replicate_index: int) -> Dataset:
    """Dataset for one replicate; deterministic in ``(seed, replicate_index)``."""
    rng = _rng(scenario.seed, (replicate_index,))
    n = scenario.n
    exposure, mediator, times = _draw_uncensored(scenario, rng, n)
    time1, time2 = times, times.copy()
    cal = calibrate_censoring(scenario)
    if cal is not None:
        if cal.kind == "fixed":
            c = np.full(n, cal.censor_time)
        else:
            c = _censor_from_location(scenario, cal.location, _censor_noise(scenario, rng, n, cal.outcome_sd))
            c = np.maximum(c, 1e-8)
        time1, time2 = apply_right_censoring(times, c)
        if scenario.censoring.kind == "right_interval":
            time1, time2 = apply_interval_censoring(time1, time2, scenario.censoring.interval_lengths,
                                                    scenario.censoring.interval_probs, rng)
    return Dataset.from_arrays(time1, time2, exposure, mediator)


# Monte Carlo runner

LOG_FIELDS = ("replicate", "converged", "nie_product", "nie_difference", "nde", "total_difference",
              "total_product", "se_nie_product", "alpha_a", "beta_m", "beta_a", "tau_a",
              "right_fraction", "interval_fraction")


def _one_replicate(scenario: SimScenario, index: int) -> dict:
    data = generate(scenario, index)
    rec = dict.fromkeys(LOG_FIELDS, math.nan)
    rec["replicate"] = index
    rec["right_fraction"] = float(np.mean(data.status == RIGHT))
    rec["interval_fraction"] = float(np.mean(data.status == INTERVAL))
    try:
        est = analyze(data, scenario.law, (1, 0), None, scenario.time_scale)
    except (FitError, DataValidationError, np.linalg.LinAlgError):
        rec["converged"] = False
        return rec
    rec.update(
        converged=True,
        nie_product=est.nie_product,
        nie_difference=est.nie_difference,
        nde=est.nde,
        total_difference=est.total_difference,
        total_product=est.total_product,
        se_nie_product=est.se_nie_product,
        alpha_a=est.mediator_fit.coef("exposure"),
        beta_m=est.full_fit.coef("mediator"),
        beta_a=est.full_fit.coef("exposure"),
        tau_a=est.reduced_fit.coef("exposure"),
    )
    return rec


def _replicate_chunk(args):
    scenario, indices = args
    return [_one_replicate(scenario, int(i)) for i in indices]


@dataclass(frozen=True)
class SimSummary:
    """Monte Carlo summary for one scenario at one sample size.

    With ``IE_p`` and ``IE_d`` the Monte Carlo means of the two estimators,
    ``abs_prop_difference = |IE_p - IE_d| / |IE_p|`` and ``prop_bias_* =
    |IE_* - IE| / IE`` with the analytic IE.  ``mean_abs_prop_difference``
    averages the per-replicate ratio instead.
    """

    scenario: str
    law: str
    censoring: str
    n: int
    ie_truth: float
    tau_truth: float
    mean_nie_product: float
    mean_nie_difference: float
    abs_prop_difference: float
    mean_abs_prop_difference: float
    max_abs_difference: float
    prop_bias_product: float
    prop_bias_difference: float
    var_nie_product: float
    var_nie_difference: float
    mean_total_reduced: float
    var_total_reduced: float
    mean_tau_bias: float
    se_mean_tau: float
    mean_se_nie_product: float
    mean_right_fraction: float
    mean_interval_fraction: float
    replicate_count: int
    nonconverged_count: int

    METRICS = ("mean_nie_product", "mean_nie_difference", "abs_prop_difference", "mean_abs_prop_difference",
               "max_abs_difference", "prop_bias_product", "prop_bias_difference", "var_nie_product", "var_nie_difference",
               "mean_total_reduced", "var_total_reduced", "mean_tau_bias", "se_mean_tau",
               "mean_se_nie_product", "mean_right_fraction", "mean_interval_fraction",
               "replicate_count", "nonconverged_count")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SimResult:
    scenario: SimScenario
    summary: SimSummary
    log: list = field(repr=False)
    calibration: CensoringCalibration | None = None

    def column(self, name: str, converged_only: bool = True) -> np.ndarray:
        rows = [r for r in self.log if r["converged"] or not converged_only]
        return np.array([r[name] for r in rows], dtype=float)


def summarize_log(scenario: SimScenario, log: list) -> SimSummary:
    ok = [r for r in log if r["converged"]]
    col = lambda k: np.array([r[k] for r in ok], dtype=float)  # noqa: E731
    ie = scenario.ie_truth
    p, d, tau = col("nie_product"), col("nie_difference"), col("total_difference")
    k = len(ok)
    var = (lambda x: float(np.var(x, ddof=1))) if k > 1 else (lambda x: math.nan)
    mean = (lambda x: float(np.mean(x))) if k else (lambda x: math.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        apd = abs(mean(p) - mean(d)) / abs(mean(p))
        mapd = mean(np.abs(p - d) / np.abs(p))
        pb_p = abs(mean(p) - ie) / abs(ie) if ie != 0 else math.nan
        pb_d = abs(mean(d) - ie) / abs(ie) if ie != 0 else math.nan
    return SimSummary(
        scenario=scenario.name,
        law=scenario.law,
        censoring=scenario.censoring.label,
        n=scenario.n,
        ie_truth=ie,
        tau_truth=scenario.tau_truth,
        mean_nie_product=mean(p),
        mean_nie_difference=mean(d),
        abs_prop_difference=apd,
        mean_abs_prop_difference=mapd,
        max_abs_difference=float(np.max(np.abs(p - d))) if k else math.nan,
        prop_bias_product=pb_p,
        prop_bias_difference=pb_d,
        var_nie_product=var(p),
        var_nie_difference=var(d),
        mean_total_reduced=mean(tau),
        var_total_reduced=var(tau),
        mean_tau_bias=mean(tau) - scenario.tau_truth,
        se_mean_tau=math.sqrt(var(tau) / k) if k > 1 else math.nan,
        mean_se_nie_product=mean(col("se_nie_product")),
        mean_right_fraction=float(np.mean([r["right_fraction"] for r in log])),
        mean_interval_fraction=float(np.mean([r["interval_fraction"] for r in log])),
        replicate_count=k,
        nonconverged_count=len(log) - k,
    )


def run(scenario: SimScenario, workers: int = 1, max_nonconverged: float = MAX_NONCONVERGED_FRACTION) -> SimResult:
    """Simulate, analyze every replicate and summarize.

    Raises :class:`SimulationError` (carrying the result) when more than
    ``max_nonconverged`` of the replicates fail to fit.
    """
    calibration = calibrate_censoring(scenario)  # once, before any fan-out
    indices = np.arange(scenario.replicates)
    workers = max(1, int(workers))
    if workers == 1:
        log = _replicate_chunk((scenario, indices))
    else:
        chunks = [c for c in np.array_split(indices, workers * 4) if len(c)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            log = [r for part in pool.map(_replicate_chunk, [(scenario, c) for c in chunks]) for r in part]
    result = SimResult(scenario, summarize_log(scenario, log), log, calibration)
    bad = result.summary.nonconverged_count
    if bad > max_nonconverged * scenario.replicates:
        raise SimulationError(
            f"{scenario.label} n={scenario.n}: {bad} of {scenario.replicates} replicates failed to converge",
            result,
        )
    return result


# output

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


FIGURE_METRICS = {
    "normal_metrics": ("abs_prop_difference", "prop_bias_product", "prop_bias_difference"),
    "weibull_metrics": ("abs_prop_difference", "prop_bias_product", "prop_bias_difference"),
    "variances": ("var_nie_product", "var_nie_difference", "var_total_reduced"),
}


def _tidy_rows(summaries, metrics=None):
    for s in summaries:
        for m in metrics or SimSummary.METRICS:
            yield {"scenario": s.scenario, "law": s.law, "censoring": s.censoring, "n": s.n,
                   "metric": m, "value": getattr(s, m)}


def _write_tidy(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "law", "censoring", "n", "metric", "value"])
        for r in rows:
            w.writerow([r["scenario"], r["law"], r["censoring"], r["n"], r["metric"], _fmt(r["value"])])


def emit_figure_data(summaries, path) -> list[Path]:
    """Write tidy ``(scenario, law, censoring, n, metric, value)`` CSVs.

    ``summary.csv`` holds every metric; ``normal_metrics.csv`` and
    ``weibull_metrics.csv`` (bias and estimator agreement per law) and
    ``variances.csv`` (Monte Carlo variances) are the plotting subsets.
    """
    summaries = list(summaries)
    if not summaries:
        raise ValueError("no summaries to write")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    target = out / "summary.csv"
    _write_tidy(target, _tidy_rows(summaries))
    written.append(target)
    groups = {
        "normal_metrics": [s for s in summaries if s.law == "normal"],
        "weibull_metrics": [s for s in summaries if s.law == "weibull"],
        "variances": summaries,
    }
    for name, subset in groups.items():
        if subset:
            target = out / f"{name}.csv"
            _write_tidy(target, _tidy_rows(subset, FIGURE_METRICS[name]))
            written.append(target)
    return written


def write_replicate_log(result: SimResult, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in result.log:
            w.writerow([_fmt(r[k]) for k in LOG_FIELDS])
    return path


# scenario files

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


def parse_scenario_section(name: str, section) -> list[SimScenario]:
    """Scenarios from one config section; ``n`` may list several sample sizes."""
    opts = dict(section)
    preset = opts.pop("preset", opts.get("law", "weibull")).strip().lower()
    builder = {"normal": SimScenario.normal, "weibull": SimScenario.weibull}.get(preset)
    if builder is None:
        raise ValueError(f"[{name}] unknown preset {preset!r}")
    cens = {}
    kind = opts.pop("censoring", "none").strip().lower()
    cens["kind"] = kind
    for key, conv in (("censor_fraction", float), ("interval_lengths", _floats), ("interval_probs", _floats),
                      ("censor_time", float)):
        if key in opts:
            val = opts.pop(key).strip()
            if val:
                cens["fraction" if key == "censor_fraction" else key] = conv(val)
    kw = {"name": opts.pop("name", name).strip(), "censoring": Censoring(**cens)}
    converters = {
        "law": str.strip, "time_scale": str.strip, "mediator_coeffs": _floats, "outcome_coeffs": _floats,
        "mediator_sd": float, "scale": float, "exposure_prob": float, "replicates": int, "seed": int,
    }
    sizes = _ints(opts.pop("n", "800"))
    for key, val in opts.items():
        if key not in converters:
            raise ValueError(f"[{name}] unknown key {key!r}")
        kw[key] = converters[key](val)
    return [builder(**kw, n=n) for n in sizes]


def read_scenarios(path) -> list[SimScenario]:
    """Parse a key-value scenario file (INI sections; a bare file is one scenario)."""
    cp = parse_ini(Path(path).read_text(encoding="utf-8"), "scenario")
    scenarios = []
    for name in cp.sections():
        scenarios.extend(parse_scenario_section(name, cp[name]))
    if not scenarios:
        raise ValueError(f"{path}: no scenarios defined")
    return scenarios


def scenario_manifest(result: SimResult) -> dict:
    cal = result.calibration
    return {
        "scenario": result.scenario.to_dict(),
        "calibration": None if cal is None else asdict(cal),
        "replicate_count": result.summary.replicate_count,
        "nonconverged_count": result.summary.nonconverged_count,
    }
