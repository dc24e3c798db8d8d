"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import math

import numpy as np


def check_observations(X) -> np.ndarray:
    """Return ``X`` as a 2-D float array of workload rows ``V_0..V_n``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError(f"expected rows of at least two workload values, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("workload observations must be finite")
    if np.any(X < 0):
        raise ValueError("workload observations must be nonnegative")
    return X


def check_thresholds(x0: float, x1: float) -> None:
    if math.isnan(x0) or math.isnan(x1):
        raise ValueError("thresholds must not be NaN")
    if not x0 < 0 < x1:
        raise ValueError(f"thresholds must satisfy x0 < 0 < x1, got x0={x0}, x1={x1}")


def check_positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0 or not math.isfinite(value):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_reps(reps: int) -> int:
    if int(reps) != reps or reps < 1:
        raise ValueError(f"replication count must be a positive integer, got {reps!r}")
    return int(reps)
