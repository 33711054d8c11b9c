"""Input validation helpers shared by the estimators."""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np
import scipy.sparse as sp
from sklearn.utils.validation import check_array

from .exceptions import NotFittedError, ValidationError


def check_matrix(X, *, dim=None, accept_sparse=False, name="X"):
    """Return ``X`` as a finite float64 2-D array (or CSR matrix).

    Raises ValidationError when the shape or values are unusable.
    """
    try:
        X = check_array(
            X,
            accept_sparse="csr" if accept_sparse else False,
            dtype=np.float64,
            ensure_2d=True,
            ensure_all_finite=True,
        )
    except ValueError as exc:
        raise ValidationError(f"{name}: {exc}") from exc
    if dim is not None and X.shape[1] != dim:
        raise ValidationError(f"{name}: expected {dim} columns, got {X.shape[1]}")
    return X


def check_vector(v, *, dim=None, name="vector"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValidationError(f"{name}: expected a 1-D vector, got shape {v.shape}")
    if v.size == 0:
        raise ValidationError(f"{name}: empty vector")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name}: contains NaN or infinite values")
    if dim is not None and v.shape[0] != dim:
        raise ValidationError(f"{name}: expected length {dim}, got {v.shape[0]}")
    return v


def check_sets(sets, *, dim=None, name="sets"):
    """Validate a sequence of feature sets, each a non-empty (m, D) array."""
    out = []
    for i, s in enumerate(sets):
        arr = check_matrix(s, dim=dim, name=f"{name}[{i}]")
        if dim is None:
            dim = arr.shape[1]
        out.append(arr)
    if not out:
        raise ValidationError(f"{name}: no feature sets given")
    return out


def as_label_sets(y, num_classes=None) -> list[frozenset]:
    """Normalise labels to a list of frozensets of class indices.

    Accepts integer labels, iterables of integers, or a binary indicator
    matrix (2-D array).
    """
    if sp.issparse(y):
        y = y.toarray()
    if isinstance(y, np.ndarray) and y.ndim == 2:
        sets = [frozenset(np.flatnonzero(row).tolist()) for row in y]
    else:
        sets = []
        for item in y:
            if isinstance(item, Iterable) and not isinstance(item, (str, bytes)):
                sets.append(frozenset(int(c) for c in item))
            else:
                sets.append(frozenset([int(item)]))
    for i, s in enumerate(sets):
        if not s:
            raise ValidationError(f"labels[{i}]: empty label set")
        if min(s) < 0:
            raise ValidationError(f"labels[{i}]: negative class index")
        if num_classes is not None and max(s) >= num_classes:
            raise ValidationError(
                f"labels[{i}]: class {max(s)} out of range for {num_classes} classes"
            )
    return sets


def label_matrix(label_sets, num_classes, *, multi_label):
    """Target matrix for the loss: one-hot rows or multi-hot indicator rows."""
    Y = np.zeros((len(label_sets), num_classes))
    for i, s in enumerate(label_sets):
        if not multi_label and len(s) != 1:
            raise ValidationError(
                f"labels[{i}]: {len(s)} labels given but multi_label is False"
            )
        Y[i, sorted(s)] = 1.0
    return Y


def check_is_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet; call fit first."
        )
