"""Centroid-based pseudo-labelling of target features.

Round 0 builds prediction-weighted centroids and assigns every sample to
the most cosine-similar centroid; each further round rebuilds the centroids
from the hard assignment and reassigns.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureSet


class DegenerateClassMass(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PseudoLabels:
    labels: np.ndarray
    centroids: np.ndarray
    rounds: int
    empty_classes: tuple[int, ...] = ()

    @property
    def K(self) -> int:
        return self.centroids.shape[0]


def _unit(c):
    norms = np.linalg.norm(c, axis=1, keepdims=True)
    return c / np.where(norms == 0.0, 1.0, norms)


def assign(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # argmax returns the first maximum, i.e. the lower class index on ties
    return np.argmax(x @ centroids.T, axis=1).astype(np.int64)


def cluster_assign(fs: FeatureSet | np.ndarray, probs: np.ndarray, rounds: int = 1) -> PseudoLabels:
    x = fs.features if isinstance(fs, FeatureSet) else np.asarray(fs, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[0] != x.shape[0]:
        raise ValueError(f"{probs.shape[0]} probability rows for {x.shape[0]} samples")
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6, rtol=0):
        raise ValueError("probability rows must sum to 1")
    mass = probs.sum(axis=0)
    if np.any(mass <= 0):
        raise DegenerateClassMass(f"class {int(np.flatnonzero(mass <= 0)[0])} has zero probability mass")
    K = probs.shape[1]

    cent = _unit((probs.T @ x) / mass[:, None])
    labels = assign(x, cent)
    empty: set[int] = set()
    for _ in range(rounds):
        onehot = np.eye(K)[labels]
        counts = onehot.sum(axis=0)
        new = onehot.T @ x
        empty = {int(k) for k in np.flatnonzero(counts == 0)}
        new[counts == 0] = cent[counts == 0]
        cent = _unit(new)
        labels = assign(x, cent)
    cent.setflags(write=False)
    labels.setflags(write=False)
    return PseudoLabels(labels, cent, rounds, tuple(sorted(empty)))
