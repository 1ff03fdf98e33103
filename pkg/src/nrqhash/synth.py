"""Seeded synthetic Gaussian-mixture data for the toy CLI commands and tests."""

from __future__ import annotations

import numpy as np

from .dataio import FeatureMatrix, LabelSet


def gaussian_mixture(n: int, dim: int, components: int = 4, seed: int = 0,
                     center_spread: float = 2.0, noise: float = 1.0):
    """Clustered points around seeded Gaussian component centers.

    Returns (data, labels) with labels[i] the component index of row i;
    component sizes differ by at most one.
    """
    if n < components:
        raise ValueError(f"need n >= components, got n={n}, components={components}")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_spread, size=(components, dim))
    labels = np.arange(n, dtype=np.int64) % components
    data = centers[labels] + rng.normal(0.0, noise, size=(n, dim))
    return data, labels


def mixture_features(n: int, dim: int, components: int = 4, seed: int = 0,
                     center_spread: float = 2.0, noise: float = 1.0):
    """Same as gaussian_mixture but wrapped as (FeatureMatrix, LabelSet)."""
    data, labels = gaussian_mixture(n, dim, components, seed, center_spread, noise)
    return FeatureMatrix(data), LabelSet(tuple(frozenset((int(v),)) for v in labels))
