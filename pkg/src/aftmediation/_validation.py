"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length


def check_survival_target(y, entry=None):
    """Split a survival target into ``(time1, time2, entry)`` arrays.

    ``y`` is either a 1-d array of exact event times or an ``(n, 2)`` array of
    ``(time1, time2)`` pairs: ``time2 == time1`` exact, ``time2`` NaN
    right-censored at ``time1``, otherwise interval-censored on
    ``(time1, time2)``.  ``entry`` holds optional left-truncation times (NaN
    for none).
    """
    y = check_array(y, ensure_2d=False, dtype=np.float64, ensure_all_finite="allow-nan")
    if y.ndim == 1:
        if np.isnan(y).any():
            raise ValueError("exact event times must not be NaN")
        time1, time2 = y, y.copy()
    elif y.ndim == 2 and y.shape[1] == 2:
        time1, time2 = y[:, 0].copy(), y[:, 1].copy()
        if np.isnan(time1).any():
            raise ValueError("time1 must not be NaN")
    else:
        raise ValueError(f"y must be 1-d or have two columns, got shape {y.shape}")
    if entry is not None:
        entry = check_array(entry, ensure_2d=False, dtype=np.float64, ensure_all_finite="allow-nan")
        if entry.ndim != 1:
            raise ValueError("entry must be 1-d")
        check_consistent_length(time1, entry)
    return time1, time2, entry


def check_design(X, y=None, min_features: int = 0):
    """Validate a 2-d numeric design and (optionally) its length against ``y``."""
    X = check_array(X, dtype=np.float64, ensure_min_features=0)
    if X.shape[1] < min_features:
        raise ValueError(f"X needs at least {min_features} columns, got {X.shape[1]}")
    if y is not None:
        check_consistent_length(X, y)
    return X


def check_contrast(contrast) -> tuple[float, float]:
    if isinstance(contrast, str):
        parts = [p for p in contrast.split(",") if p.strip()]
    else:
        parts = list(contrast)
    if len(parts) != 2:
        raise ValueError(f"contrast must be a pair (a, a*), got {contrast!r}")
    a, a_star = (float(v) for v in parts)
    if not (np.isfinite(a) and np.isfinite(a_star)):
        raise ValueError("contrast values must be finite")
    return a, a_star
