"""Expected AFT scores under a misspecified residual law.

The working model is ``log T = a + b X + s eps`` with ``eps`` from an assumed
law ``f0``; the data follow ``log T = alpha + beta X + r`` with ``r`` from a true
law ``f*`` (for mediation, the convolution of the outcome and mediator
residuals).  ``X`` is binary with ``P(X = 1) = p``.  Censoring happens at a fixed
time ``C`` and left truncation at a fixed entry time ``V``.

Writing ``g`` for the derivative of one observation's log-likelihood with
respect to the linear predictor, the intercept-adjusted score for ``b`` has
expectation

    E[U_b - p U_a] = p (1 - p) (E[g | X = 1] - E[g | X = 0]),

and each conditional expectation is a one-dimensional integral over ``r``:

    E[g | x] = { int_{rv}^{rc} g_exact(z(r)) f*(r) dr + S*(rc) g_cens(z(rc)) } / S*(rv)
               + g_trunc(z(rv))

with ``rc = log C - alpha - beta x``, ``rv = log V - alpha - beta x`` and
``z(r) = (r + alpha - a + (beta - b) x) / s``.  When ``b = beta`` and neither
censoring nor truncation is present the two conditional integrals coincide, so
the expectation vanishes for every pair of laws; with censoring or truncation
it vanishes only if the laws agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from ._quadrature import QuadratureError, integrate
from .distributions import Convolved, ErrorLaw, ExtremeValueMin, law_from_name

__all__ = [
    "ScoreBiasConfig",
    "ScoreBiasResult",
    "ProbeResult",
    "QuadratureError",
    "ProbeError",
    "expected_score_right_censoring",
    "expected_score_left_truncation",
    "expected_scores",
    "mle_limit_probe",
    "marginal_time_quantile",
    "weibull_scenario_config",
    "monte_carlo_expected_score",
]

DEFAULT_TOLERANCE = 1e-10


class ProbeError(RuntimeError):
    pass


def _law(x) -> ErrorLaw:
    return law_from_name(x) if isinstance(x, str) else x


def _law_std(law: ErrorLaw) -> float:
    if isinstance(law, Convolved):
        return math.sqrt(law.variance)
    if isinstance(law, ExtremeValueMin):
        return math.pi / math.sqrt(6.0)
    return 1.0


@dataclass(frozen=True)
class ScoreBiasConfig:
    """True and working models plus fixed censoring / truncation times.

    Parameters
    ----------
    true_law, assumed_law : ErrorLaw or name
        ``f*`` and ``f0``.
    true_params : (alpha, beta)
        Intercept and exposure coefficient of the true log-time model.
    probe_params : (a, b) or None
        Working-model parameters at which scores are evaluated; defaults to
        ``true_params``.
    exposure_prob : float
        ``p = P(X = 1)`` among observed (post-truncation) subjects.
    censor_time : float
        Fixed censoring time ``C``; ``inf`` means no censoring.
    truncation_time : float
        Fixed entry time ``V``; ``0`` means no truncation.
    true_scale : float
        Multiplies the true residual (``r = true_scale * e``, ``e ~ true_law``).
    assumed_scale : float or None
        Working scale ``s``; defaults to ``true_scale`` times the ratio of the
        two laws' standard deviations.
    """

    true_law: ErrorLaw
    assumed_law: ErrorLaw = field(default_factory=ExtremeValueMin)
    true_params: tuple[float, float] = (0.0, 0.0)
    probe_params: tuple[float, float] | None = None
    exposure_prob: float = 0.5
    censor_time: float = math.inf
    truncation_time: float = 0.0
    true_scale: float = 1.0
    assumed_scale: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "true_law", _law(self.true_law))
        object.__setattr__(self, "assumed_law", _law(self.assumed_law))
        if isinstance(self.assumed_law, Convolved):
            raise ValueError("the working law must be StandardNormal or ExtremeValueMin")
        object.__setattr__(self, "true_params", tuple(float(v) for v in self.true_params))
        if self.probe_params is None:
            object.__setattr__(self, "probe_params", self.true_params)
        object.__setattr__(self, "probe_params", tuple(float(v) for v in self.probe_params))
        if self.assumed_scale is None:
            ratio = _law_std(self.true_law) / _law_std(self.assumed_law)
            object.__setattr__(self, "assumed_scale", self.true_scale * ratio)
        if not 0 < self.exposure_prob < 1:
            raise ValueError("exposure_prob must be in (0, 1)")
        if not (self.censor_time > 0):
            raise ValueError("censor_time must be positive (inf for no censoring)")
        if not (self.truncation_time >= 0 and math.isfinite(self.truncation_time)):
            raise ValueError("truncation_time must be finite and nonnegative (0 for no truncation)")
        if self.truncation_time >= self.censor_time:
            raise ValueError("truncation_time must be below censor_time")
        if not (self.true_scale > 0 and self.assumed_scale > 0):
            raise ValueError("scales must be positive")

    @property
    def censored(self) -> bool:
        return math.isfinite(self.censor_time)

    @property
    def truncated(self) -> bool:
        return self.truncation_time > 0

    def with_probe(self, a: float, b: float, scale: float | None = None) -> ScoreBiasConfig:
        return replace(self, probe_params=(a, b), assumed_scale=self.assumed_scale if scale is None else scale)


@dataclass(frozen=True)
class ScoreBiasResult:
    """Expected intercept-adjusted score for the exposure coefficient.

    ``expected_score_alpha`` and ``expected_score_log_scale`` are the raw
    expected scores for the intercept and ``log s``; ``expected_score_beta_raw``
    is ``E[U_b]`` without the intercept adjustment.
    """

    expected_score_beta: float
    quadrature_abs_error: float
    n_evaluations: int
    converged: bool
    expected_score_alpha: float = math.nan
    expected_score_beta_raw: float = math.nan
    expected_score_log_scale: float = math.nan

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _true_parts(cfg: ScoreBiasConfig):
    law, ts = cfg.true_law, cfg.true_scale
    lo, hi = law.support_bounds()
    return law, ts, lo * ts, hi * ts


def _conditional_moments(cfg: ScoreBiasConfig, x: float, tol: float):
    """``(E[g | x], E[k | x], abs_error, n_eval, ok)`` with ``k`` the log-scale score."""
    alpha, beta = cfg.true_params
    a, b = cfg.probe_params
    s = cfg.assumed_scale
    f0 = cfg.assumed_law
    law, ts, r_lo, r_hi = _true_parts(cfg)
    shift = alpha - a + (beta - b) * x

    def z_of(r):
        return (r + shift) / s

    lower, upper = r_lo, r_hi
    rv = rc = None
    if cfg.truncated:
        rv = math.log(cfg.truncation_time) - alpha - beta * x
        lower = max(lower, rv)
    if cfg.censored:
        rc = math.log(cfg.censor_time) - alpha - beta * x
        upper = min(upper, rc)

    def integrand(r):
        z = z_of(r)
        dens = np.asarray(law.pdf(r / ts), dtype=float) / ts
        psi = f0.dlogpdf(z)
        return np.vstack([-psi / s * dens, (-psi * z - 1.0) * dens])

    if upper > lower:
        res = integrate(integrand, lower, upper, epsabs=tol)
        m_g, m_k = (float(v) for v in res.value)
        err, n_eval, ok = res.abs_error, res.n_eval, res.converged
    else:
        m_g = m_k = err = 0.0
        n_eval, ok = 0, True

    if rc is not None:
        zc = z_of(rc)
        s_c = float(law.sf(rc / ts))
        h = float(f0.hazard(zc))
        m_g += s_c * h / s
        m_k += s_c * h * zc
    if rv is not None:
        zv = z_of(rv)
        s_v = float(law.sf(rv / ts))
        if s_v <= 0:
            raise QuadratureError("truncation point beyond the support of the true law")
        h = float(f0.hazard(zv))
        m_g = m_g / s_v - h / s
        m_k = m_k / s_v - h * zv
        err = err / s_v
    return m_g, m_k, err, n_eval, ok


def expected_scores(cfg: ScoreBiasConfig, tolerance: float = DEFAULT_TOLERANCE) -> ScoreBiasResult:
    """Expected scores of the working model at ``probe_params`` (censoring and truncation together)."""
    p = cfg.exposure_prob
    g0, k0, e0, n0, ok0 = _conditional_moments(cfg, 0.0, tolerance)
    g1, k1, e1, n1, ok1 = _conditional_moments(cfg, 1.0, tolerance)
    contrast = p * (1 - p) * (g1 - g0)
    err = p * (1 - p) * (e0 + e1)
    return ScoreBiasResult(
        expected_score_beta=contrast,
        quadrature_abs_error=err,
        n_evaluations=n0 + n1,
        converged=ok0 and ok1,
        expected_score_alpha=(1 - p) * g0 + p * g1,
        expected_score_beta_raw=p * g1,
        expected_score_log_scale=(1 - p) * k0 + p * k1,
    )


def _checked(cfg: ScoreBiasConfig, tolerance: float) -> ScoreBiasResult:
    res = expected_scores(cfg, tolerance)
    if not res.converged:
        raise QuadratureError(
            f"quadrature did not reach tolerance {tolerance:g} (error estimate {res.quadrature_abs_error:.3g})"
        )
    return res


def expected_score_right_censoring(config: ScoreBiasConfig,
                                   tolerance: float = DEFAULT_TOLERANCE) -> ScoreBiasResult:
    """Expected exposure score under fixed right censoring at ``config.censor_time``."""
    return _checked(replace(config, truncation_time=0.0), tolerance)


def expected_score_left_truncation(config: ScoreBiasConfig,
                                   tolerance: float = DEFAULT_TOLERANCE) -> ScoreBiasResult:
    """Expected exposure score under fixed left truncation at ``config.truncation_time``."""
    return _checked(replace(config, censor_time=math.inf), tolerance)


@dataclass(frozen=True)
class ProbeResult:
    """Limit of the working-model MLE.

    ``alpha_bar``, ``beta_bar``, ``scale_bar`` solve all three expected score
    equations.  ``alpha_profile`` and ``scale_profile`` solve the intercept and
    scale equations with the exposure coefficient held at its true value, and
    ``score_beta_at_profile`` is the exposure score there.
    """

    alpha_bar: float
    beta_bar: float
    scale_bar: float
    beta_bias: float
    max_abs_score: float
    iterations: int
    converged: bool
    alpha_profile: float = math.nan
    scale_profile: float = math.nan
    score_beta_at_profile: float = math.nan

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _score_vector(cfg: ScoreBiasConfig, theta, free, tol) -> np.ndarray:
    a, b, log_s = theta
    res = _checked(cfg.with_probe(a, b, math.exp(log_s)), tol)
    full = np.array([res.expected_score_alpha, res.expected_score_beta_raw, res.expected_score_log_scale])
    return full[free]


def _newton_solve(cfg, theta0, free, tol, score_tol, max_iter, fd_step=1e-6):
    theta = np.array(theta0, dtype=float)
    free = np.asarray(free)
    U = _score_vector(cfg, theta, free, tol)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(U)) < score_tol:
            return theta, U, it - 1, True
        J = np.empty((len(free), len(free)))
        for j, idx in enumerate(free):
            e = np.zeros(3)
            e[idx] = fd_step
            J[:, j] = (_score_vector(cfg, theta + e, free, tol) - _score_vector(cfg, theta - e, free, tol)) / (2 * fd_step)
        try:
            step = np.linalg.solve(J, -U)
        except np.linalg.LinAlgError as exc:
            raise ProbeError(f"singular expected-score Jacobian at {theta}") from exc
        if abs(step[-1]) > 1.0 and free[-1] == 2:
            step = step / abs(step[-1])
        t = 1.0
        norm = np.max(np.abs(U))
        for _ in range(40):
            cand = theta.copy()
            cand[free] += t * step
            try:
                U_new = _score_vector(cfg, cand, free, tol)
            except QuadratureError:
                U_new = None
            if U_new is not None and np.max(np.abs(U_new)) < norm:
                break
            t *= 0.5
        else:
            raise ProbeError(f"damped Newton stalled at {theta} (max |score| {norm:.3g})")
        theta, U = cand, U_new
    return theta, U, max_iter, bool(np.max(np.abs(U)) < score_tol)


def mle_limit_probe(config: ScoreBiasConfig, tolerance: float = 1e-12, score_tol: float = 1e-10,
                    max_iter: int = 50) -> ProbeResult:
    """Pseudo-true working-model parameters: the zero of the expected score.

    Intercept, exposure coefficient and log-scale are solved jointly by damped
    Newton with a finite-difference Jacobian of the quadrature-evaluated
    expected scores.
    """
    alpha, beta = config.true_params
    a0, b0 = config.probe_params
    # start near the truth: the working intercept absorbs the mean residual difference
    s0 = config.assumed_scale
    theta0 = [a0, b0, math.log(s0)]
    start = _newton_solve(config, theta0, [0, 2], tolerance, score_tol, max_iter)[0]
    theta0 = [start[0], b0, start[2]]
    theta, U, iters, ok = _newton_solve(config, theta0, [0, 1, 2], tolerance, score_tol, max_iter)
    if not ok:
        raise ProbeError(f"probe did not converge: max |score| {np.max(np.abs(U)):.3g} after {iters} iterations")
    prof, _, _, prof_ok = _newton_solve(config, [theta[0], beta, theta[2]], [0, 2], tolerance, score_tol, max_iter)
    score_prof = math.nan
    if prof_ok:
        score_prof = _checked(config.with_probe(prof[0], beta, math.exp(prof[2])), tolerance).expected_score_beta
    return ProbeResult(
        alpha_bar=float(theta[0]),
        beta_bar=float(theta[1]),
        scale_bar=float(math.exp(theta[2])),
        beta_bias=float(theta[1] - beta),
        max_abs_score=float(np.max(np.abs(U))),
        iterations=iters,
        converged=ok,
        alpha_profile=float(prof[0]) if prof_ok else math.nan,
        scale_profile=float(math.exp(prof[2])) if prof_ok else math.nan,
        score_beta_at_profile=score_prof,
    )


def marginal_time_quantile(config: ScoreBiasConfig, q: float) -> float:
    """``q``-quantile of ``T`` under the true model, mixing over binary ``X``."""
    if not 0 < q < 1:
        raise ValueError("q must be in (0, 1)")
    alpha, beta = config.true_params
    p, law, ts = config.exposure_prob, config.true_law, config.true_scale

    def cdf(w):
        return (1 - p) * float(law.cdf((w - alpha) / ts)) + p * float(law.cdf((w - alpha - beta) / ts)) - q

    lo, hi = law.support_bounds()
    w_lo = alpha + min(0.0, beta) + lo * ts
    w_hi = alpha + max(0.0, beta) + hi * ts
    return math.exp(brentq(cdf, w_lo, w_hi, xtol=1e-13, rtol=4 * np.finfo(float).eps))


def weibull_scenario_config(censor_quantile: float | None = 0.7, truncation_quantile: float | None = None,
                            sigma: float = 0.25, beta_m: float = -0.6, mediator_sd: float = 1.0,
                            outcome_coeffs=(4.0, 0.5), mediator_coeffs=(0.0, -0.3),
                            exposure_prob: float = 0.5) -> ScoreBiasConfig:
    """Reduced-form misspecification of the Weibull mediation scenario.

    The mediator-free model has intercept ``b0 + b_m a0`` and exposure
    coefficient ``b_a + b_m a_a``; its residual is ``sigma eps + b_m xi``, fit
    with an extreme-value working law.  Censoring / truncation times are set at
    quantiles of the true marginal time law (``None`` for none).
    """
    alpha = outcome_coeffs[0] + beta_m * mediator_coeffs[0]
    beta = outcome_coeffs[1] + beta_m * mediator_coeffs[1]
    cfg = ScoreBiasConfig(
        true_law=Convolved(sigma, beta_m, mediator_sd, ExtremeValueMin()),
        assumed_law=ExtremeValueMin(),
        true_params=(alpha, beta),
        exposure_prob=exposure_prob,
    )
    changes = {}
    if censor_quantile is not None:
        changes["censor_time"] = marginal_time_quantile(cfg, censor_quantile)
    if truncation_quantile is not None:
        changes["truncation_time"] = marginal_time_quantile(cfg, truncation_quantile)
    return replace(cfg, **changes) if changes else cfg


def monte_carlo_expected_score(config: ScoreBiasConfig, n: int, rng: np.random.Generator):
    """Sample estimate of the intercept-adjusted exposure score and its standard error.

    Cross-checks the quadrature.  Each exposure stratum gets ``n // 2`` draws
    of the true residual; fixed truncation is applied by rejection and fixed
    censoring by replacing the exact-time score with the censored one.
    """
    alpha, beta = config.true_params
    a, b = config.probe_params
    s, p, f0 = config.assumed_scale, config.exposure_prob, config.assumed_law
    means, variances = [], []
    for x in (0.0, 1.0):
        w = alpha + beta * x + config.true_scale * config.true_law.sample(rng, n // 2)
        if config.truncated:
            w = w[w >= math.log(config.truncation_time)]
        eta = a + b * x
        g = -f0.dlogpdf((w - eta) / s) / s
        if config.censored:
            c = math.log(config.censor_time)
            g = np.where(w > c, f0.hazard((c - eta) / s) / s, g)
        if config.truncated:
            g = g - f0.hazard((math.log(config.truncation_time) - eta) / s) / s
        means.append(float(g.mean()))
        variances.append(float(g.var(ddof=1)) / len(g))
    w_ = p * (1 - p)
    return w_ * (means[1] - means[0]), w_ * math.sqrt(variances[0] + variances[1])
