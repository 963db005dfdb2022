"""Standardized residual laws for AFT likelihoods.

Three laws are provided:

* :class:`StandardNormal` -- log-normal AFT (or gaussian regression on the
  time scale).
* :class:`ExtremeValueMin` -- the standard minimum extreme-value (Gumbel-min)
  law, ``f(x) = exp(x - exp(x))``.  ``log T = mu + sigma * eps`` with this law
  is the Weibull AFT model.
* :class:`Convolved` -- the law of ``sigma * eps + beta_m * xi`` where ``eps``
  follows one of the two laws above and ``xi ~ N(0, mediator_sd**2)``.  This
  is the residual of the outcome model once the mediator is marginalized out.

All laws are immutable and hashable; every method accepts scalars or arrays.
"""

from __future__ import annotations

import functools
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.integrate import quad_vec
from scipy.optimize import brentq

__all__ = [
    "ErrorLaw",
    "StandardNormal",
    "ExtremeValueMin",
    "Convolved",
    "DegenerateConvolutionError",
    "density",
    "log_density",
    "survival",
    "cdf",
    "density_derivative",
    "sample",
    "law_from_name",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_DENSITY_FLOOR = 1e-300
_TAIL_MASS = 1e-12


class DegenerateConvolutionError(ValueError):
    """Raised when a convolved law is requested with a zero mediator coefficient."""


def _as_output(x_in, values):
    if np.ndim(x_in) == 0:
        return float(values)
    return values


class ErrorLaw(ABC):
    """A standardized residual distribution on the real line."""

    name: str = ""

    @abstractmethod
    def pdf(self, x): ...

    @abstractmethod
    def logpdf(self, x): ...

    @abstractmethod
    def sf(self, x): ...

    @abstractmethod
    def pdf_derivative(self, x): ...

    @abstractmethod
    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray: ...

    @abstractmethod
    def ppf(self, q): ...

    def cdf(self, x):
        """``1 - sf(x)``; defined this way so the two agree exactly."""
        return 1.0 - self.sf(x)

    def logsf(self, x):
        x_arr = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.log(np.asarray(self.sf(x_arr), dtype=float))
        return _as_output(x, out)

    def logcdf(self, x):
        x_arr = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.log(np.asarray(self.cdf(x_arr), dtype=float))
        return _as_output(x, out)

    def dlogpdf(self, x):
        """Derivative of the log-density, ``f'(x) / f(x)``."""
        x_arr = np.asarray(x, dtype=float)
        out = np.asarray(self.pdf_derivative(x_arr)) / np.maximum(
            np.asarray(self.pdf(x_arr)), _DENSITY_FLOOR
        )
        return _as_output(x, out)

    def hazard(self, x):
        """``f(x) / S(x)``, evaluated on the log scale."""
        x_arr = np.asarray(x, dtype=float)
        out = np.exp(np.asarray(self.logpdf(x_arr)) - np.asarray(self.logsf(x_arr)))
        return _as_output(x, out)

    def support_bounds(self, tail: float = _TAIL_MASS) -> tuple[float, float]:
        """Quantiles at ``tail`` and ``1 - tail``."""
        return float(self.ppf(tail)), float(self.ppf(1.0 - tail))


@dataclass(frozen=True)
class StandardNormal(ErrorLaw):
    name = "normal"

    def pdf(self, x):
        x_arr = np.asarray(x, dtype=float)
        return _as_output(x, np.exp(-0.5 * x_arr**2 - _LOG_SQRT_2PI))

    def logpdf(self, x):
        x_arr = np.asarray(x, dtype=float)
        return _as_output(x, -0.5 * x_arr**2 - _LOG_SQRT_2PI)

    def pdf_derivative(self, x):
        x_arr = np.asarray(x, dtype=float)
        return _as_output(x, -x_arr * np.exp(-0.5 * x_arr**2 - _LOG_SQRT_2PI))

    def dlogpdf(self, x):
        return _as_output(x, -np.asarray(x, dtype=float))

    def sf(self, x):
        return _as_output(x, special.ndtr(-np.asarray(x, dtype=float)))

    def logsf(self, x):
        return _as_output(x, special.log_ndtr(-np.asarray(x, dtype=float)))

    def logcdf(self, x):
        return _as_output(x, special.log_ndtr(np.asarray(x, dtype=float)))

    def hazard(self, x):
        x_arr = np.asarray(x, dtype=float)
        out = np.exp(-0.5 * x_arr**2 - _LOG_SQRT_2PI - special.log_ndtr(-x_arr))
        return _as_output(x, out)

    def ppf(self, q):
        return _as_output(q, special.ndtri(np.asarray(q, dtype=float)))

    def sample(self, rng, n):
        return rng.standard_normal(n)


@dataclass(frozen=True)
class ExtremeValueMin(ErrorLaw):
    """Standard Gumbel-min law: ``S(x) = exp(-exp(x))``, mean ``-euler_gamma``."""

    name = "weibull"

    def pdf(self, x):
        x_arr = np.asarray(x, dtype=float)
        return _as_output(x, np.exp(x_arr - np.exp(x_arr)))

    def logpdf(self, x):
        x_arr = np.asarray(x, dtype=float)
        return _as_output(x, x_arr - np.exp(x_arr))

    def pdf_derivative(self, x):
        x_arr = np.asarray(x, dtype=float)
        ex = np.exp(x_arr)
        return _as_output(x, (1.0 - ex) * np.exp(x_arr - ex))

    def dlogpdf(self, x):
        return _as_output(x, 1.0 - np.exp(np.asarray(x, dtype=float)))

    def sf(self, x):
        return _as_output(x, np.exp(-np.exp(np.asarray(x, dtype=float))))

    def logsf(self, x):
        return _as_output(x, -np.exp(np.asarray(x, dtype=float)))

    def logcdf(self, x):
        ex = np.exp(np.asarray(x, dtype=float))
        with np.errstate(divide="ignore"):
            out = np.log(-np.expm1(-ex))
        return _as_output(x, out)

    def hazard(self, x):
        return _as_output(x, np.exp(np.asarray(x, dtype=float)))

    def ppf(self, q):
        q_arr = np.asarray(q, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.log(-np.log1p(-q_arr))
        return _as_output(q, out)

    def sample(self, rng, n):
        u = rng.random(n)
        return np.log(-np.log1p(-u))


@dataclass(frozen=True)
class Convolved(ErrorLaw):
    """Law of ``sigma * eps + beta_m * xi`` with ``xi ~ N(0, mediator_sd**2)``.

    Parameters
    ----------
    sigma : float
        Scale of the outcome residual ``eps`` (positive).
    beta_m : float
        Outcome coefficient of the mediator; nonzero, sign irrelevant for the
        density because ``xi`` is symmetric.
    mediator_sd : float
        Standard deviation of the mediator residual.
    base : ErrorLaw
        Law of ``eps``; ``ExtremeValueMin`` for the Weibull model.

    Densities and tails are computed by adaptive Gauss-Kronrod quadrature over
    ``eps`` truncated to its ``[1e-12, 1 - 1e-12]`` quantile range; the normal
    component is integrated analytically.
    """

    sigma: float
    beta_m: float
    mediator_sd: float = 1.0
    base: ErrorLaw = ExtremeValueMin()

    name = "convolved"
    tolerance = 1e-10
    derivative_step = 1e-5

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (self.mediator_sd > 0 and math.isfinite(self.mediator_sd)):
            raise ValueError(f"mediator_sd must be positive, got {self.mediator_sd}")
        if self.beta_m == 0:
            raise DegenerateConvolutionError(
                "beta_m = 0 collapses the convolution to the outcome law; "
                "use the component law directly"
            )
        if isinstance(self.base, Convolved):
            raise ValueError("base law must be StandardNormal or ExtremeValueMin")

    @property
    def mediator_scale(self) -> float:
        return abs(self.beta_m) * self.mediator_sd

    @property
    def variance(self) -> float:
        base_var = 1.0 if isinstance(self.base, StandardNormal) else math.pi**2 / 6
        return self.sigma**2 * base_var + self.mediator_scale**2

    def _integrate(self, x, kernel):
        flat = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
        lo, hi = self.base.support_bounds()
        tau = self.mediator_scale

        def integrand(e):
            return self.base.pdf(e) * kernel((flat - self.sigma * e) / tau)

        val, _ = quad_vec(integrand, lo, hi, epsabs=self.tolerance, epsrel=self.tolerance, limit=400)
        return val.reshape(np.shape(x))

    def pdf(self, x):
        if np.ndim(x) == 0:
            return _convolved_pdf_scalar(self, float(x))
        tau = self.mediator_scale
        return self._integrate(x, lambda u: np.exp(-0.5 * u**2 - _LOG_SQRT_2PI) / tau)

    def logpdf(self, x):
        x_arr = np.asarray(x, dtype=float)
        return _as_output(x, np.log(np.maximum(np.asarray(self.pdf(x_arr)), _DENSITY_FLOOR)))

    def sf(self, x):
        if np.ndim(x) == 0:
            return float(self._integrate(float(x), lambda u: special.ndtr(-u)))
        return self._integrate(x, lambda u: special.ndtr(-u))

    def pdf_derivative(self, x):
        x_arr = np.asarray(x, dtype=float)
        h = self.derivative_step
        out = (np.asarray(self.pdf(x_arr + h)) - np.asarray(self.pdf(x_arr - h))) / (2 * h)
        return _as_output(x, out)

    def ppf(self, q):
        q_arr = np.atleast_1d(np.asarray(q, dtype=float))
        spread = 12.0 * math.sqrt(self.variance) + 40.0 * self.sigma
        out = np.array(
            [brentq(lambda v, p=p: self.cdf(v) - p, -spread, spread, xtol=1e-12) for p in q_arr.ravel()]
        ).reshape(q_arr.shape)
        if np.ndim(q) == 0:
            return float(out.ravel()[0])
        return out

    def support_bounds(self, tail: float = _TAIL_MASS) -> tuple[float, float]:
        # conservative: component quantiles widened by the normal spread
        lo, hi = self.base.support_bounds(tail)
        pad = 7.5 * self.mediator_scale
        return self.sigma * lo - pad, self.sigma * hi + pad

    def sample(self, rng, n):
        eps = self.base.sample(rng, n)
        xi = rng.standard_normal(n) * self.mediator_sd
        return self.sigma * eps + self.beta_m * xi


@functools.lru_cache(maxsize=500_000)
def _convolved_pdf_scalar(law: Convolved, x: float) -> float:
    tau = law.mediator_scale
    val = law._integrate(x, lambda u: np.exp(-0.5 * u**2 - _LOG_SQRT_2PI) / tau)
    return float(val)


_NAMED = {
    "normal": StandardNormal,
    "gaussian": StandardNormal,
    "lognormal": StandardNormal,
    "weibull": ExtremeValueMin,
    "extreme": ExtremeValueMin,
    "extreme_value": ExtremeValueMin,
}


def law_from_name(name: str) -> ErrorLaw:
    """Look up a fittable law by its user-facing name (``normal`` / ``weibull``)."""
    try:
        return _NAMED[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown law {name!r}; expected one of: normal, weibull") from None


# functional aliases


def density(law: ErrorLaw, x):
    return law.pdf(x)


def log_density(law: ErrorLaw, x):
    return law.logpdf(x)


def survival(law: ErrorLaw, x):
    return law.sf(x)


def cdf(law: ErrorLaw, x):
    return law.cdf(x)


def density_derivative(law: ErrorLaw, x):
    return law.pdf_derivative(x)


def sample(law: ErrorLaw, rng, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. residuals; ``rng`` is a Generator or an integer seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return law.sample(rng, n)
