"""Parametric accelerated failure time regression by maximum likelihood.

The model is ``g(T) = x @ beta + sigma * eps`` with ``g = log`` (AFT) or
``g = identity`` (gaussian regression on the time scale, as used for
outcomes such as age that are modelled as normal on their own scale).
Exact, right-censored and interval-censored outcomes are supported, each
optionally left-truncated.

Parameters are ``theta = (beta, log sigma)``.  The score is analytic; the
observed information is a central finite difference of the score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    Convolved,
    ErrorLaw,
    ExtremeValueMin,
    StandardNormal,
    law_from_name,
)
from .survdata import EXACT, INTERVAL, RIGHT, Dataset

__all__ = [
    "AftSpec",
    "AftFit",
    "LinearFit",
    "FitError",
    "RankDeficientError",
    "design_matrix",
    "loglik",
    "score",
    "fit",
    "fit_linear",
    "ols",
]

_LOG_FLOOR = math.log(1e-300)
_EULER_GAMMA = 0.5772156649015329
_MAX_LOG_SCALE_STEP = 2.0


class FitError(RuntimeError):
    pass


class RankDeficientError(FitError, ValueError):
    """Design matrix does not have full column rank."""

    def __init__(self, column: str, names):
        self.column = column
        super().__init__(
            f"design matrix is rank deficient: column {column!r} is linearly dependent "
            f"on the preceding columns {list(names)}"
        )


@dataclass(frozen=True)
class AftSpec:
    """Which regressors enter the model and which residual law is assumed."""

    law: ErrorLaw = field(default_factory=ExtremeValueMin)
    exposure: bool = True
    mediator: bool = True
    covariates: bool = True
    time_scale: str = "log"

    def __post_init__(self):
        if isinstance(self.law, str):
            object.__setattr__(self, "law", law_from_name(self.law))
        if isinstance(self.law, Convolved):
            raise ValueError("the convolved law is not fittable; use StandardNormal or ExtremeValueMin")
        if self.time_scale not in ("log", "identity"):
            raise ValueError(f"time_scale must be 'log' or 'identity', got {self.time_scale!r}")

    def transform(self, t):
        if self.time_scale == "log":
            with np.errstate(divide="ignore"):
                return np.log(t)
        return np.asarray(t, dtype=float)


def design_matrix(spec: AftSpec, data: Dataset) -> tuple[np.ndarray, list[str]]:
    cols = [np.ones(data.n)]
    names = ["(Intercept)"]
    if spec.exposure:
        cols.append(data.exposure)
        names.append("exposure")
    if spec.mediator:
        cols.append(data.mediator)
        names.append("mediator")
    if spec.covariates:
        cols.extend(data.covariates.T)
        names.extend(data.covariate_names)
    return np.column_stack(cols), names


def check_full_rank(X: np.ndarray, names) -> None:
    if np.linalg.matrix_rank(X) == X.shape[1]:
        return
    for j in range(1, X.shape[1] + 1):
        if np.linalg.matrix_rank(X[:, :j]) < j:
            raise RankDeficientError(names[j - 1], names[: j - 1])


def _log1mexp(a):
    """``log(1 - exp(a))`` for ``a <= 0``."""
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    small = a > -math.log(2.0)
    with np.errstate(divide="ignore"):
        out[small] = np.log(-np.expm1(a[small]))
        out[~small] = np.log1p(-np.exp(a[~small]))
    return out


class _Likelihood:
    """Log-likelihood and score for one (spec, design, data) triple.

    Rows are put in a canonical order so results do not depend on subject order.
    """

    def __init__(self, spec: AftSpec, X: np.ndarray, data: Dataset):
        order = np.lexsort(
            (*X.T[::-1], np.nan_to_num(data.entry, nan=-1.0), data.time2, data.time1, data.status)
        )
        self.law = spec.law
        self.X = np.ascontiguousarray(X[order])
        status = data.status[order]
        y1 = spec.transform(data.time1[order])
        y2 = spec.transform(np.where(status == INTERVAL, data.time2[order], data.time1[order]))
        entry = data.entry[order]
        self.ex = np.flatnonzero(status == EXACT)
        self.rc = np.flatnonzero(status == RIGHT)
        self.ic = np.flatnonzero(status == INTERVAL)
        self.tr = np.flatnonzero(~np.isnan(entry))
        self.y_ex = y1[self.ex]
        self.y_rc = y1[self.rc]
        self.yl_ic = y1[self.ic]
        self.yr_ic = y2[self.ic]
        self.y_tr = spec.transform(entry[self.tr])
        self.n, self.p = self.X.shape
        self.floored = 0

    def _interval_logdiff(self, zl, zr):
        law = self.law
        with np.errstate(over="ignore"):  # overflowed tails are floored below
            lsl, lsr = law.logsf(zl), law.logsf(zr)
            lcl, lcr = law.logcdf(zl), law.logcdf(zr)
        upper = lsl < lcr
        out = np.empty_like(zl)
        with np.errstate(invalid="ignore"):
            out[upper] = lsl[upper] + _log1mexp(lsr[upper] - lsl[upper])
            out[~upper] = lcr[~upper] + _log1mexp(lcl[~upper] - lcr[~upper])
        bad = ~np.isfinite(out)
        self.floored = int(bad.sum())
        out[bad] = _LOG_FLOOR
        return out, bad

    def _interval_ratios(self, zl, zr):
        """``f(zl) / D`` and ``f(zr) / D`` with ``D = F(zr) - F(zl)``.

        Each tail is divided through by its own hazard so that no two large
        log terms are subtracted. Floored intervals contribute zero.
        """
        law = self.law
        _, floored = self._interval_logdiff(zl, zr)
        fl = np.zeros_like(zl)
        fr = np.zeros_like(zl)
        with np.errstate(all="ignore"):
            lsl, lsr = law.logsf(zl), law.logsf(zr)
            lcl, lcr = law.logcdf(zl), law.logcdf(zr)
            upper = lsl < lcr
            u = upper & ~floored
            q = lsr[u] - lsl[u]
            denom = -np.expm1(q)
            fl[u] = law.hazard(zl[u]) / denom
            fr[u] = np.exp(np.log(law.hazard(zr[u])) + q) / denom
            w = ~upper & ~floored
            q = lcl[w] - lcr[w]
            denom = -np.expm1(q)
            fr[w] = np.exp(law.logpdf(zr[w]) - lcr[w]) / denom
            fl[w] = np.exp(law.logpdf(zl[w]) - lcl[w] + q) / denom
        fl[~np.isfinite(fl)] = 0.0
        fr[~np.isfinite(fr)] = 0.0
        return fl, fr

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            raise FitError(f"non-finite parameter vector {theta}")
        beta, log_s = theta[:-1], theta[-1]
        return self.X @ beta, log_s, math.exp(log_s)

    def loglik(self, theta) -> float:
        eta, log_s, s = self.split(theta)
        law = self.law
        total = 0.0
        if len(self.ex):
            z = (self.y_ex - eta[self.ex]) / s
            total += float(np.sum(law.logpdf(z))) - len(self.ex) * log_s
        if len(self.rc):
            total += float(np.sum(law.logsf((self.y_rc - eta[self.rc]) / s)))
        if len(self.ic):
            e = eta[self.ic]
            total += float(np.sum(self._interval_logdiff((self.yl_ic - e) / s, (self.yr_ic - e) / s)[0]))
        if len(self.tr):
            total -= float(np.sum(law.logsf((self.y_tr - eta[self.tr]) / s)))
        return total

    def score(self, theta) -> np.ndarray:
        eta, log_s, s = self.split(theta)
        law = self.law
        d_eta = np.zeros(self.n)
        d_logs = 0.0
        if len(self.ex):
            z = (self.y_ex - eta[self.ex]) / s
            psi = law.dlogpdf(z)
            d_eta[self.ex] = -psi / s
            d_logs += float(np.sum(-psi * z)) - len(self.ex)
        if len(self.rc):
            z = (self.y_rc - eta[self.rc]) / s
            h = law.hazard(z)
            d_eta[self.rc] = h / s
            d_logs += float(np.sum(h * z))
        if len(self.ic):
            e = eta[self.ic]
            zl, zr = (self.yl_ic - e) / s, (self.yr_ic - e) / s
            fl, fr = self._interval_ratios(zl, zr)
            d_eta[self.ic] = -(fr - fl) / s
            d_logs += float(np.sum(-(zr * fr - zl * fl)))
        if len(self.tr):
            z = (self.y_tr - eta[self.tr]) / s
            h = law.hazard(z)
            d_eta[self.tr] -= h / s
            d_logs -= float(np.sum(h * z))
        return np.append(self.X.T @ d_eta, d_logs)

    def neg_hessian(self, theta, step: float = 1e-6) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        k = len(theta)
        H = np.empty((k, k))
        for j in range(k):
            e = np.zeros(k)
            e[j] = step
            H[:, j] = (self.score(theta + e) - self.score(theta - e)) / (2 * step)
        H = -0.5 * (H + H.T)
        return H


def _likelihood(spec: AftSpec, data: Dataset) -> _Likelihood:
    X, _ = design_matrix(spec, data)
    return _Likelihood(spec, X, data)


def loglik(spec: AftSpec, params, data: Dataset) -> float:
    """Log-likelihood at ``params = (coefficients..., log_scale)``."""
    return _likelihood(spec, data).loglik(params)


def score(spec: AftSpec, params, data: Dataset) -> np.ndarray:
    """Analytic gradient of :func:`loglik` with respect to ``params``."""
    return _likelihood(spec, data).score(params)


@dataclass(frozen=True)
class AftFit:
    """Fitted AFT model.

    ``covariance`` is over ``(coefficients, log_scale)``; it is ``None`` when
    the observed information could not be inverted.
    """

    coefficients: np.ndarray
    names: tuple[str, ...]
    log_scale: float
    covariance: np.ndarray | None
    loglik: float
    converged: bool
    iterations: int
    max_abs_score: float
    spec: AftSpec
    n: int
    floored_intervals: int = 0

    @property
    def scale(self) -> float:
        return math.exp(self.log_scale)

    @property
    def params(self) -> np.ndarray:
        return np.append(self.coefficients, self.log_scale)

    @property
    def standard_errors(self) -> np.ndarray | None:
        if self.covariance is None:
            return None
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"{name!r} is not in the model ({list(self.names)})") from None

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.index(name)])

    def var(self, name: str) -> float:
        if self.covariance is None:
            raise FitError("covariance unavailable (singular observed information)")
        i = self.index(name)
        return float(self.covariance[i, i])

    def to_dict(self) -> dict:
        se = self.standard_errors
        return {
            "law": self.spec.law.name,
            "time_scale": self.spec.time_scale,
            "n": self.n,
            "coefficients": {k: float(v) for k, v in zip(self.names, self.coefficients)},
            "standard_errors": None if se is None else {k: float(v) for k, v in zip(self.names, se[:-1])},
            "log_scale": self.log_scale,
            "log_scale_se": None if se is None else float(se[-1]),
            "scale": self.scale,
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "max_abs_score": self.max_abs_score,
            "covariance_available": self.covariance is not None,
        }


def _initial_params(spec: AftSpec, X: np.ndarray, data: Dataset) -> np.ndarray:
    # censored times treated as exact; intervals at their midpoint on the model scale
    upper = np.where(data.status == INTERVAL, data.time2, data.time1)
    if spec.time_scale == "log":
        t_mid = np.sqrt(data.time1 * upper)
    else:
        t_mid = 0.5 * (data.time1 + upper)
    y = spec.transform(t_mid)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    sd = float(np.sqrt(np.mean(resid**2)))
    if isinstance(spec.law, ExtremeValueMin):
        s = max(sd * math.sqrt(6.0) / math.pi, 1e-3)
        beta = beta.copy()
        beta[0] += s * _EULER_GAMMA
    else:
        s = max(sd, 1e-3)
    return np.append(beta, math.log(s))


def fit(spec: AftSpec, data: Dataset, init=None, *, max_iter: int = 200, score_tol: float = 1e-8,
        loglik_rtol: float = 1e-12, max_halvings: int = 50, hessian_step: float = 1e-6) -> AftFit:
    """Maximum likelihood by Newton iterations with step-halving.

    Converges when ``max |score| < score_tol`` and the relative change of the
    log-likelihood is below ``loglik_rtol``; ``converged`` is False if
    ``max_iter`` is reached first.
    """
    X, names = design_matrix(spec, data)
    check_full_rank(X, names)
    lik = _Likelihood(spec, X, data)
    theta = _initial_params(spec, X, data) if init is None else np.asarray(init, dtype=float).copy()
    if len(theta) != X.shape[1] + 1:
        raise ValueError(f"init has length {len(theta)}, expected {X.shape[1] + 1}")

    ll = lik.loglik(theta)
    if not math.isfinite(ll):
        raise FitError("log-likelihood is not finite at the initial values")
    U = lik.score(theta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        H = lik.neg_hessian(theta, hessian_step)
        direction = _newton_direction(H, U)
        # keep the trial scale within a factor e**2 of the current one
        t = min(1.0, _MAX_LOG_SCALE_STEP / max(abs(direction[-1]), 1e-300))
        for _ in range(max_halvings):
            cand = theta + t * direction
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                ll_new = lik.loglik(cand)
            if math.isfinite(ll_new) and ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            raise FitError(f"line search failed after {max_halvings} halvings at iteration {it}")
        rel = abs(ll_new - ll) / max(1.0, abs(ll))
        theta, ll = cand, ll_new
        U = lik.score(theta)
        if np.max(np.abs(U)) < score_tol and rel < loglik_rtol:
            converged = True
            break

    H = lik.neg_hessian(theta, hessian_step)
    try:
        cov = np.linalg.inv(H)
        if not np.all(np.isfinite(cov)) or np.any(np.diag(cov) < 0):
            cov = None
        else:
            cov = 0.5 * (cov + cov.T)
    except np.linalg.LinAlgError:
        cov = None
    lik.loglik(theta)  # refresh the floored-interval count at the solution
    return AftFit(
        coefficients=theta[:-1].copy(),
        names=tuple(names),
        log_scale=float(theta[-1]),
        covariance=cov,
        loglik=float(ll),
        converged=converged,
        iterations=it,
        max_abs_score=float(np.max(np.abs(U))),
        spec=spec,
        n=data.n,
        floored_intervals=lik.floored,
    )


def _newton_direction(H: np.ndarray, U: np.ndarray) -> np.ndarray:
    # ascent direction; falls back to Levenberg damping if H is not positive definite
    try:
        L = np.linalg.cholesky(H)
        return np.linalg.solve(L.T, np.linalg.solve(L, U))
    except np.linalg.LinAlgError:
        pass
    lam = 1e-6 * max(1.0, float(np.max(np.abs(np.diag(H)))))
    eye = np.eye(len(U))
    for _ in range(60):
        try:
            L = np.linalg.cholesky(H + lam * eye)
            return np.linalg.solve(L.T, np.linalg.solve(L, U))
        except np.linalg.LinAlgError:
            lam *= 10.0
    return U / max(1.0, float(np.max(np.abs(U))))


@dataclass(frozen=True)
class LinearFit:
    """Ordinary least squares fit.

    ``residual_sd`` uses the unbiased divisor ``n - p``; ``covariance`` is
    ``residual_sd**2 * inv(X'X)``.
    """

    coefficients: np.ndarray
    names: tuple[str, ...]
    residual_sd: float
    covariance: np.ndarray
    n: int

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"{name!r} is not in the model ({list(self.names)})") from None

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.index(name)])

    def var(self, name: str) -> float:
        i = self.index(name)
        return float(self.covariance[i, i])

    def to_dict(self) -> dict:
        se = np.sqrt(np.diag(self.covariance))
        return {
            "n": self.n,
            "coefficients": {k: float(v) for k, v in zip(self.names, self.coefficients)},
            "standard_errors": {k: float(v) for k, v in zip(self.names, se)},
            "residual_sd": self.residual_sd,
        }


def ols(X: np.ndarray, y: np.ndarray, names) -> LinearFit:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    names = list(names)
    check_full_rank(X, names)
    n, p = X.shape
    Q, R = np.linalg.qr(X)
    beta = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ beta
    dof = n - p
    sd = float(np.sqrt(resid @ resid / dof)) if dof > 0 else 0.0
    Rinv = np.linalg.inv(R)
    cov = sd**2 * (Rinv @ Rinv.T)
    return LinearFit(coefficients=beta, names=tuple(names), residual_sd=sd, covariance=cov, n=n)


def fit_linear(data: Dataset, covariates: bool = True) -> LinearFit:
    """Mediator model: OLS of the mediator on intercept, exposure and covariates."""
    spec = AftSpec(law=StandardNormal(), exposure=True, mediator=False, covariates=covariates)
    X, names = design_matrix(spec, data)
    return ols(X, data.mediator, names)
