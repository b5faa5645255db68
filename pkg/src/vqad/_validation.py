"""Input validation helpers shared by the estimator layer."""

from __future__ import annotations

import numpy as np


def check_array(X, name="X", ndim=2, dtype=np.float64, allow_empty=False):
    """Coerce to a finite float array of the expected rank."""
    X = np.asarray(X, dtype=dtype)
    if X.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {X.shape}")
    if not allow_empty and X.size == 0:
        raise ValueError(f"{name} must not be empty")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    return X


def check_consistent_length(X, y):
    if len(X) != len(y):
        raise ValueError(f"X and y disagree on length: {len(X)} vs {len(y)}")


def check_is_fitted(estimator, attribute):
    if getattr(estimator, attribute, None) is None:
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )
