"""Input validation helpers shared by the estimator API and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .torus import wrap

__all__ = ["check_angles", "check_pairs"]


def check_angles(X, p=None):
    """Validate an (n, p) array of angles and wrap it to [-pi, pi).

    Accepts 1-d input as a single-component series.  ``p`` pins the
    expected torus dimension.
    """
    X = check_array(np.asarray(X, dtype=float), ensure_2d=False)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] not in (1, 2):
        raise ValueError(f"angles must have 1 or 2 components, got {X.shape[1]}")
    if p is not None and X.shape[1] != p:
        raise ValueError(f"expected {p}-component angles, got {X.shape[1]}")
    return wrap(X)


def check_pairs(X):
    """Validate a sequence of AlignedPairData items."""
    from .evo import AlignedPairData

    pairs = list(X)
    if not pairs:
        raise ValueError("need at least one aligned pair")
    for i, p in enumerate(pairs):
        if not isinstance(p, AlignedPairData):
            raise ValueError(f"item {i} is not an AlignedPairData")
    return pairs
