"""The seven source categories and helpers for compositional label vectors.

A label is a 7-element numpy vector of non-negative reals summing to one,
ordered as in ``CATEGORIES``.  Crowd submissions additionally allow a "?"
response, giving the 8-column response set in ``RESPONSES``.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

CATEGORIES = (
    "Brain",
    "Muscle",
    "Eye",
    "Heart",
    "Line Noise",
    "Channel Noise",
    "Other",
)

N_CATEGORIES = len(CATEGORIES)

#: Crowd-label responses: the seven categories plus the low-confidence "?".
RESPONSES = CATEGORIES + ("?",)
N_RESPONSES = len(RESPONSES)

CATEGORY_INDEX = {name: i for i, name in enumerate(CATEGORIES)}
RESPONSE_INDEX = {name: i for i, name in enumerate(RESPONSES)}

LABEL_SUM_TOL = 1e-6


def as_label_vector(values, n_categories: int = N_CATEGORIES) -> np.ndarray:
    """Validate and return a compositional label vector as float64.

    Raises ``DataError`` if the vector has the wrong length, negative
    entries, or does not sum to 1 within ``LABEL_SUM_TOL``.
    """
    vec = np.asarray(values, dtype=np.float64)
    if vec.shape != (n_categories,):
        raise DataError(
            f"label vector must have shape ({n_categories},), got {vec.shape}"
        )
    if not np.all(np.isfinite(vec)):
        raise DataError("label vector contains non-finite entries")
    if np.any(vec < 0):
        raise DataError("label vector contains negative entries")
    total = float(vec.sum())
    if abs(total - 1.0) > LABEL_SUM_TOL:
        raise DataError(f"label vector sums to {total!r}, expected 1 within {LABEL_SUM_TOL}")
    return vec


def argmax_category(label) -> int:
    """Discretize a label by maximal probability; ties go to the lowest index."""
    return int(np.argmax(np.asarray(label)))
