"""Input checks shared by the estimators and the pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ValidationError


def column_names(X):
    """Column names carried by a SampleSet or DataFrame, else None."""
    cols = getattr(X, "columns", None)
    if cols is None:
        return None
    return tuple(str(c) for c in cols)


def as_matrix(X, name: str = "X") -> np.ndarray:
    """2-D float array with finite entries and at least one row."""
    data = getattr(X, "data", X) if hasattr(X, "time_slot") else X
    try:
        return check_array(data, dtype=np.float64, ensure_2d=True, ensure_min_samples=1,
                           ensure_min_features=0, input_name=name)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def as_vector(y, n: int | None = None, name: str = "y") -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise ValidationError(f"{name} contains NaN or infinite entries")
    if n is not None and y.shape[0] != n:
        raise ValidationError(f"{name} has {y.shape[0]} entries, expected {n}")
    return y


def check_fraction(value: float, name: str, *, closed_right: bool = False) -> float:
    value = float(value)
    ok = 0 < value <= 1 if closed_right else 0 < value < 1
    if not ok:
        interval = "(0, 1]" if closed_right else "(0, 1)"
        raise ValidationError(f"{name} must lie in {interval}, got {value}")
    return value
