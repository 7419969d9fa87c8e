"""Input validation shared by the estimator front-end."""

from __future__ import annotations

from typing import Any, Mapping, Sequence

import numpy as np
from sklearn.utils.validation import check_array

from .dataset import FilterPredicate


def check_vectors(X: Any, *, d: int | None = None, name: str = "X") -> np.ndarray:
    """2-D finite float array with no zero rows, optionally of width ``d``."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, input_name=name)
    if d is not None and X.shape[1] != d:
        raise ValueError(f"{name} has {X.shape[1]} features, expected {d}")
    if np.any(np.linalg.norm(X, axis=1) == 0):
        raise ValueError(f"{name} contains a zero vector")
    return X


def check_query(q: Any, d: int) -> np.ndarray:
    q = check_vectors(np.atleast_2d(q), d=d, name="q")
    if q.shape[0] != 1:
        raise ValueError("expected a single query vector")
    q = (q[0] / np.linalg.norm(q[0])).astype(np.float32).astype(np.float64)
    return q


def check_metadata(metadata: Sequence[Mapping[str, str]] | None, n: int) -> list[dict[str, str]]:
    if metadata is None:
        return [{} for _ in range(n)]
    rows = [dict(r) for r in metadata]
    if len(rows) != n:
        raise ValueError(f"metadata has {len(rows)} rows for {n} vectors")
    return rows


def as_predicate(obj: FilterPredicate | Mapping) -> FilterPredicate:
    return obj if isinstance(obj, FilterPredicate) else FilterPredicate(obj)


def check_positive_int(value: Any, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
