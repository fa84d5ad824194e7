"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array


def check_features(X, n_features: int) -> np.ndarray:
    """2-D finite float array with exactly ``n_features`` columns; a 1-D row is promoted."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    X = check_array(X, dtype=float, ensure_all_finite=True)
    if X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def check_unit_interval(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1) or not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must lie in [0, 1]")
    return x
