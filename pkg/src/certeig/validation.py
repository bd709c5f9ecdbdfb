"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .affine import AffineOperator
from .errors import DimensionMismatchError


def check_operator(X, hermitian=False):
    """Validate the fit input as an affine operator."""
    if not isinstance(X, AffineOperator):
        raise TypeError(
            "expected an AffineOperator; build one with operator_from_texts(...)"
        )
    if hermitian and not X.is_hermitian:
        raise ValueError("operator must have Hermitian term matrices")
    return X


def check_mu_points(X, p):
    """Coerce parameter points to a (n_points, p) float array.

    Accepts a single point (length-p sequence), a 2-D array with p columns,
    or, for p == 1, a plain 1-D array of values.
    """
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if p == 1:
            arr = arr.reshape(-1, 1)
        elif arr.size == p:
            arr = arr.reshape(1, p)
        else:
            raise DimensionMismatchError(
                f"cannot interpret 1-D input of length {arr.size} as points in "
                f"{p} parameters"
            )
    if arr.ndim != 2 or arr.shape[1] != p:
        raise DimensionMismatchError(
            f"expected points with {p} columns, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("parameter points must be finite")
    return arr
