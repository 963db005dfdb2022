"""Scikit-learn style wrappers around the AFT and mediation routines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_contrast, check_design, check_survival_target
from .aft import AftSpec, fit, loglik
from .distributions import law_from_name
from .mediation import BootstrapConfig, analyze
from .survdata import Dataset

__all__ = ["AFTRegressor", "AFTMediation"]


def _dataset(time1, time2, entry, exposure, mediator, covariates) -> Dataset:
    n = len(time1)
    return Dataset.from_arrays(
        time1, time2,
        exposure=np.zeros(n) if exposure is None else exposure,
        mediator=np.zeros(n) if mediator is None else mediator,
        covariates=covariates,
        covariate_names=[f"x{j}" for j in range(covariates.shape[1])],
        entry=entry,
    )


class AFTRegressor(RegressorMixin, BaseEstimator):
    """Parametric AFT regression: ``g(T) = intercept + X coef + scale * eps``.

    Parameters
    ----------
    law : {"weibull", "normal"}
        Residual law (extreme-value for Weibull, standard normal).
    time_scale : {"log", "identity"}
        ``g``; ``"identity"`` with the normal law is gaussian regression on
        the time scale.
    max_iter, tol : Newton iteration cap and score tolerance.

    Attributes
    ----------
    intercept_, coef_, scale_ : fitted parameters.
    fit_ : the underlying :class:`~aftmediation.aft.AftFit`.

    Notes
    -----
    ``y`` may be a 1-d array of exact times or an ``(n, 2)`` array of
    ``(time1, time2)`` intervals with ``time2`` NaN for right censoring.
    ``score`` returns the mean log-likelihood, not R^2.
    """

    def __init__(self, law="weibull", time_scale="log", max_iter=200, tol=1e-8):
        self.law = law
        self.time_scale = time_scale
        self.max_iter = max_iter
        self.tol = tol

    def _spec(self) -> AftSpec:
        return AftSpec(law=law_from_name(self.law), exposure=False, mediator=False, covariates=True,
                       time_scale=self.time_scale)

    def _data(self, X, y, entry=None) -> Dataset:
        time1, time2, entry = check_survival_target(y, entry)
        X = check_design(X, time1)
        return _dataset(time1, time2, entry, None, None, X)

    def fit(self, X, y, entry=None):
        data = self._data(X, y, entry)
        self.n_features_in_ = data.n_covariates
        self.fit_ = fit(self._spec(), data, max_iter=self.max_iter, score_tol=self.tol)
        self.intercept_ = float(self.fit_.coefficients[0])
        self.coef_ = self.fit_.coefficients[1:].copy()
        self.scale_ = self.fit_.scale
        return self

    def predict_location(self, X):
        """Linear predictor ``intercept + X coef`` on the ``g(T)`` scale."""
        check_is_fitted(self, "fit_")
        X = check_design(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.intercept_ + X @ self.coef_

    def predict(self, X):
        """Median event time."""
        eta = self.predict_location(X) + self.scale_ * float(law_from_name(self.law).ppf(0.5))
        return np.exp(eta) if self.time_scale == "log" else eta

    def score(self, X, y, entry=None, sample_weight=None):
        """Mean log-likelihood per observation (``g(T)`` scale)."""
        check_is_fitted(self, "fit_")
        if sample_weight is not None:
            raise ValueError("sample weights are not supported")
        data = self._data(X, y, entry)
        return loglik(self._spec(), self.fit_.params, data) / data.n


class AFTMediation(BaseEstimator):
    """Product and difference mediation estimates for a survival outcome.

    ``X`` holds the exposure, the mediator and any covariates as columns
    (positions set by ``exposure_index`` and ``mediator_index``); ``y`` is as
    for :class:`AFTRegressor`.

    Attributes
    ----------
    estimates_ : :class:`~aftmediation.mediation.MediationEstimates`
    nde_, nie_product_, nie_difference_, total_product_, total_difference_ : float
    """

    def __init__(self, law="weibull", time_scale="log", contrast=(1, 0), n_bootstrap=0, seed=0,
                 ci_level=0.95, workers=1, exposure_index=0, mediator_index=1):
        self.law = law
        self.time_scale = time_scale
        self.contrast = contrast
        self.n_bootstrap = n_bootstrap
        self.seed = seed
        self.ci_level = ci_level
        self.workers = workers
        self.exposure_index = exposure_index
        self.mediator_index = mediator_index

    def fit(self, X, y, entry=None):
        time1, time2, entry = check_survival_target(y, entry)
        X = check_design(X, time1, min_features=2)
        if self.exposure_index == self.mediator_index:
            raise ValueError("exposure and mediator must be different columns")
        rest = [j for j in range(X.shape[1]) if j not in (self.exposure_index, self.mediator_index)]
        data = _dataset(time1, time2, entry, X[:, self.exposure_index], X[:, self.mediator_index], X[:, rest])
        boot = None
        if self.n_bootstrap:
            boot = BootstrapConfig(replicates=int(self.n_bootstrap), seed=int(self.seed),
                                   ci_level=float(self.ci_level), workers=int(self.workers))
        self.n_features_in_ = X.shape[1]
        self.estimates_ = analyze(data, law_from_name(self.law), check_contrast(self.contrast), boot,
                                  self.time_scale)
        for key in ("nde", "nie_product", "nie_difference", "total_product", "total_difference"):
            setattr(self, key + "_", getattr(self.estimates_, key))
        return self

    def summary(self) -> list[dict]:
        check_is_fitted(self, "estimates_")
        return self.estimates_.table()
