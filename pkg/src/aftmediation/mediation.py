"""Natural direct and indirect effects from AFT + linear mediator models.

Three models are fit:

* full AFT:     g(T) = b0 + b_a A + b_m M + b_z'Z + sigma eps
* reduced AFT:  g(T) = b0* + tau_a A + b_z*'Z + sigma~ nu
* mediator OLS: M = a0 + a_a A + a_z'Z + xi

For a contrast ``(a, a*)`` with ``d = a - a*``:

* NDE                 = b_a d
* NIE (product)       = a_a b_m d
* NIE (difference)    = (tau_a - b_a) d
* total (product)     = NDE + NIE (product)
* total (difference)  = tau_a d

The effects are causal contrasts on the log-time scale (time scale for
``time_scale="identity"``) only under no unmeasured exposure-outcome,
exposure-mediator and mediator-outcome confounding given Z, and no
exposure-induced mediator-outcome confounding.  Under censoring or truncation
the difference route is consistent only when the reduced model's residual law
matches the convolution of the outcome and mediator residuals (normal/normal);
the product route does not need that.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from .aft import AftFit, AftSpec, FitError, LinearFit, fit, fit_linear
from .distributions import ErrorLaw, ExtremeValueMin, law_from_name
from .survdata import Dataset, DataValidationError

__all__ = [
    "MediationEstimates",
    "BootstrapConfig",
    "BootstrapResult",
    "BootstrapError",
    "ESTIMANDS",
    "nde",
    "product_nie",
    "difference_nie",
    "delta_se_product",
    "point_estimates",
    "bootstrap",
    "analyze",
]

ESTIMANDS = ("nde", "nie_difference", "nie_product", "total_difference", "total_product")
ROW_LABELS = {
    "nde": "Direct",
    "nie_difference": "Indirect (difference)",
    "nie_product": "Indirect (product)",
    "total_difference": "Total (difference)",
    "total_product": "Total (product)",
}


class BootstrapError(RuntimeError):
    pass


def _delta(contrast) -> float:
    a, a_star = contrast
    return float(a) - float(a_star)


def nde(full_fit: AftFit, contrast=(1, 0)) -> float:
    return full_fit.coef("exposure") * _delta(contrast)


def product_nie(mediator_fit: LinearFit, full_fit: AftFit, contrast=(1, 0)) -> float:
    """``alpha_a * beta_m * (a - a*)``."""
    if "mediator" not in full_fit.names:
        raise ValueError("the outcome model does not include the mediator")
    return mediator_fit.coef("exposure") * full_fit.coef("mediator") * _delta(contrast)


def difference_nie(reduced_fit: AftFit, full_fit: AftFit, contrast=(1, 0)) -> float:
    """``(tau_a - beta_a) * (a - a*)``."""
    if "mediator" in reduced_fit.names:
        raise ValueError("the reduced model must not include the mediator")
    extra_full = [n for n in full_fit.names if n != "mediator"]
    if list(reduced_fit.names) != extra_full:
        raise ValueError(f"design mismatch: reduced {list(reduced_fit.names)} vs full {list(full_fit.names)}")
    return (reduced_fit.coef("exposure") - full_fit.coef("exposure")) * _delta(contrast)


def delta_se_product(mediator_fit: LinearFit, full_fit: AftFit, contrast=(1, 0)) -> float:
    """Delta-method SE of the product estimator, ignoring the cross-model covariance."""
    a_a = mediator_fit.coef("exposure")
    b_m = full_fit.coef("mediator")
    var = a_a**2 * full_fit.var("mediator") + b_m**2 * mediator_fit.var("exposure")
    return math.sqrt(max(var, 0.0)) * abs(_delta(contrast))


@dataclass(frozen=True)
class BootstrapConfig:
    """Nonparametric bootstrap settings.

    A percentile interval at level ``ci_level`` is only reported when
    ``replicates >= 40 / (1 - ci_level)``.
    """

    replicates: int = 500
    seed: int = 0
    ci_level: float = 0.95
    workers: int = 1
    max_drop_fraction: float = 0.05

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("bootstrap needs at least 2 replicates")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must be in (0, 1)")

    @property
    def percentile_ci_available(self) -> bool:
        return self.replicates >= 40.0 / (1.0 - self.ci_level) - 1e-9


@dataclass(frozen=True)
class BootstrapResult:
    se: dict
    percentile_ci: dict | None
    kept: int
    dropped: int
    draws: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class _Models:
    full: AftFit
    reduced: AftFit
    mediator: LinearFit


def _fit_models(data: Dataset, law: ErrorLaw, time_scale: str, covariates: bool = True) -> _Models:
    full = fit(AftSpec(law=law, exposure=True, mediator=True, covariates=covariates, time_scale=time_scale), data)
    reduced = fit(AftSpec(law=law, exposure=True, mediator=False, covariates=covariates, time_scale=time_scale), data)
    med = fit_linear(data, covariates=covariates)
    return _Models(full, reduced, med)


def _effects(models: _Models, contrast) -> dict:
    d = _delta(contrast)
    direct = models.full.coef("exposure") * d
    nie_p = models.mediator.coef("exposure") * models.full.coef("mediator") * d
    total_d = models.reduced.coef("exposure") * d
    return {
        "nde": direct,
        "nie_difference": total_d - direct,
        "nie_product": nie_p,
        "total_difference": total_d,
        "total_product": direct + nie_p,
    }


def point_estimates(data: Dataset, law="weibull", contrast=(1, 0), time_scale: str = "log",
                    covariates: bool = True) -> dict | None:
    """Effect estimates only; ``None`` when any AFT fit fails to converge."""
    law = law_from_name(law) if isinstance(law, str) else law
    try:
        models = _fit_models(data, law, time_scale, covariates)
    except (FitError, DataValidationError, np.linalg.LinAlgError):
        return None
    if not (models.full.converged and models.reduced.converged):
        return None
    return _effects(models, contrast)


def _replicate_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(index,))


def _bootstrap_chunk(args):
    statistic, data, seed, indices = args
    out = []
    for b in indices:
        rng = np.random.default_rng(_replicate_seed(seed, b))
        idx = rng.integers(0, data.n, data.n)
        try:
            value = statistic(data.take(idx))
        except (FitError, DataValidationError, np.linalg.LinAlgError):
            value = None
        out.append(None if value is None else np.asarray(value, dtype=float))
    return out


def _run_replicates(statistic, data: Dataset, config: BootstrapConfig):
    B = config.replicates
    workers = max(1, int(config.workers))
    if workers == 1:
        return _bootstrap_chunk((statistic, data, config.seed, range(B)))
    chunks = np.array_split(np.arange(B), workers * 4)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_bootstrap_chunk, [(statistic, data, config.seed, list(c)) for c in chunks if len(c)])
        return [v for part in parts for v in part]


class _EffectsStatistic:
    # picklable callable for worker processes
    def __init__(self, law, contrast, time_scale, covariates):
        self.law, self.contrast, self.time_scale, self.covariates = law, contrast, time_scale, covariates

    def __call__(self, data):
        est = point_estimates(data, self.law, self.contrast, self.time_scale, self.covariates)
        return None if est is None else [est[k] for k in ESTIMANDS]


def bootstrap_statistic(statistic, data: Dataset, config: BootstrapConfig):
    """Resample subjects with replacement and evaluate ``statistic`` on each resample.

    Returns ``(draws, dropped)`` with ``draws`` of shape ``(kept, k)``; replicates
    where ``statistic`` returns ``None`` or raises a fit error are dropped.
    """
    values = _run_replicates(statistic, data, config)
    kept = [v for v in values if v is not None]
    dropped = len(values) - len(kept)
    if dropped > config.max_drop_fraction * config.replicates:
        raise BootstrapError(
            f"{dropped} of {config.replicates} bootstrap replicates failed to converge "
            f"(limit {config.max_drop_fraction:.0%})"
        )
    if len(kept) < 2:
        raise BootstrapError("fewer than 2 usable bootstrap replicates")
    return np.vstack(kept), dropped


def bootstrap(data: Dataset, law="weibull", config: BootstrapConfig | None = None, contrast=(1, 0),
              time_scale: str = "log", covariates: bool = True) -> BootstrapResult:
    """Bootstrap SEs (and percentile CIs) for all five effect estimates."""
    config = config or BootstrapConfig()
    law = law_from_name(law) if isinstance(law, str) else law
    draws, dropped = bootstrap_statistic(_EffectsStatistic(law, tuple(contrast), time_scale, covariates), data, config)
    sd = draws.std(axis=0, ddof=1)
    se = {k: float(v) for k, v in zip(ESTIMANDS, sd)}
    pci = None
    if config.percentile_ci_available:
        lo_q = (1 - config.ci_level) / 2
        lo = np.quantile(draws, lo_q, axis=0)
        hi = np.quantile(draws, 1 - lo_q, axis=0)
        pci = {k: (float(a), float(b)) for k, a, b in zip(ESTIMANDS, lo, hi)}
    return BootstrapResult(se=se, percentile_ci=pci, kept=draws.shape[0], dropped=dropped, draws=draws)


@dataclass(frozen=True)
class MediationEstimates:
    """Effect estimates for one contrast with their standard errors.

    ``se_nie_difference`` and ``se_total_product`` come from the bootstrap and
    are ``None`` without one.  All effects are on the model scale (log-time for
    AFT models); :meth:`table` adds exponentiated estimates.
    """

    nde: float
    nie_product: float
    nie_difference: float
    total_product: float
    total_difference: float
    se_nde: float
    se_nie_product: float
    se_nie_difference: float | None
    se_total_product: float | None
    se_total_difference: float
    ci_level: float
    contrast: tuple[float, float]
    law: str = "weibull"
    time_scale: str = "log"
    total_difference_flagged: bool = False
    percentile_ci: dict | None = None
    bootstrap_replicates: int = 0
    bootstrap_dropped: int = 0
    full_fit: AftFit | None = field(default=None, repr=False, compare=False)
    reduced_fit: AftFit | None = field(default=None, repr=False, compare=False)
    mediator_fit: LinearFit | None = field(default=None, repr=False, compare=False)

    @property
    def total(self) -> float:
        """Recommended total effect (product route)."""
        return self.total_product

    def estimate(self, key: str) -> float:
        return getattr(self, key)

    def se(self, key: str) -> float | None:
        return getattr(self, "se_" + key)

    def normal_ci(self, key: str) -> tuple[float, float] | None:
        se = self.se(key)
        if se is None:
            return None
        z = float(special.ndtri(0.5 + self.ci_level / 2))
        est = self.estimate(key)
        return est - z * se, est + z * se

    def table(self) -> list[dict]:
        """One row per effect, ordered as Direct / Indirect (diff, prod) / Total (diff, prod)."""
        rows = []
        for key in ESTIMANDS:
            est = self.estimate(key)
            ci = self.normal_ci(key)
            row = {
                "effect": ROW_LABELS[key],
                "key": key,
                "estimate": est,
                "se": self.se(key),
                "ci_lower": None if ci is None else ci[0],
                "ci_upper": None if ci is None else ci[1],
            }
            if self.percentile_ci is not None:
                row["pct_ci_lower"], row["pct_ci_upper"] = self.percentile_ci[key]
            if self.time_scale == "log":
                row["exp_estimate"] = math.exp(est)
                row["exp_ci_lower"] = None if ci is None else math.exp(ci[0])
                row["exp_ci_upper"] = None if ci is None else math.exp(ci[1])
            if key == "total_difference" and self.total_difference_flagged:
                row["note"] = "reduced-model total effect is biased under censoring for this law"
            rows.append(row)
        return rows

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if not k.endswith("_fit")}
        out["contrast"] = list(self.contrast)
        out["table"] = self.table()
        for name in ("full_fit", "reduced_fit", "mediator_fit"):
            model = getattr(self, name)
            out[name.replace("_fit", "_model")] = None if model is None else model.to_dict()
        return out


def analyze(data: Dataset, law="weibull", contrast=(1, 0), bootstrap_config: BootstrapConfig | None = None,
            time_scale: str = "log", covariates: bool = True) -> MediationEstimates:
    """Fit the three models and assemble effect estimates.

    Delta-method SEs are used for the direct and product-indirect effects, the
    reduced model's SE for the difference-route total, and bootstrap SEs (when
    ``bootstrap_config`` is given) for the difference-indirect and product-total.
    """
    law = law_from_name(law) if isinstance(law, str) else law
    contrast = (float(contrast[0]), float(contrast[1]))
    models = _fit_models(data, law, time_scale, covariates)
    for label, m in (("full", models.full), ("reduced", models.reduced)):
        if not m.converged:
            raise FitError(f"{label} AFT model did not converge in {m.iterations} iterations")
        if m.covariance is None:
            raise FitError(f"{label} AFT model has a singular observed information matrix")
    eff = _effects(models, contrast)
    d = abs(_delta(contrast))
    boot = None
    if bootstrap_config is not None:
        boot = bootstrap(data, law, bootstrap_config, contrast, time_scale, covariates)
    return MediationEstimates(
        nde=eff["nde"],
        nie_product=eff["nie_product"],
        nie_difference=eff["nie_difference"],
        total_product=eff["total_product"],
        total_difference=eff["total_difference"],
        se_nde=math.sqrt(models.full.var("exposure")) * d,
        se_nie_product=delta_se_product(models.mediator, models.full, contrast),
        se_nie_difference=None if boot is None else boot.se["nie_difference"],
        se_total_product=None if boot is None else boot.se["total_product"],
        se_total_difference=math.sqrt(models.reduced.var("exposure")) * d,
        ci_level=bootstrap_config.ci_level if bootstrap_config else 0.95,
        contrast=contrast,
        law=law.name,
        time_scale=time_scale,
        total_difference_flagged=isinstance(law, ExtremeValueMin),
        percentile_ci=None if boot is None else boot.percentile_ci,
        bootstrap_replicates=0 if boot is None else boot.kept,
        bootstrap_dropped=0 if boot is None else boot.dropped,
        full_fit=models.full,
        reduced_fit=models.reduced,
        mediator_fit=models.mediator,
    )
