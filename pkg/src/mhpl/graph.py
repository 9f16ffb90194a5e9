"""Exact cosine top-q neighbour graph."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import FeatureSet

_BLOCK = 1024


class NotNormalized(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    neighbor_idx: np.ndarray  # (n, q), most similar first
    neighbor_sim: np.ndarray  # (n, q), clamped to [0, 1]

    @property
    def n(self) -> int:
        return self.neighbor_idx.shape[0]

    @property
    def q(self) -> int:
        return self.neighbor_idx.shape[1]

    def nearest_all(self) -> np.ndarray:
        return self.neighbor_idx[:, 0]


def clamped_similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.clip(a @ b.T, 0.0, 1.0)


def build_graph(fs: FeatureSet | np.ndarray, q: int) -> NeighborGraph:
    """Top-q neighbours of every row by clamped cosine similarity.

    Rows must be unit norm (zero rows are allowed and have similarity 0 to
    everything).  The sample itself is never its own neighbour and ties go
    to the lower index.
    """
    x = fs.features if isinstance(fs, FeatureSet) else np.asarray(fs, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= q <= n - 1:
        raise ValueError(f"q must satisfy 1 <= q <= n-1 = {n - 1}, got {q}")
    norms = np.linalg.norm(x, axis=1)
    bad = (np.abs(norms - 1.0) > 1e-6) & (norms != 0.0)
    if bad.any():
        raise NotNormalized(f"row {int(np.flatnonzero(bad)[0])} is not unit norm")
    x = np.ascontiguousarray(x, dtype=np.float64)
    idx = np.empty((n, q), dtype=np.int64)
    sim = np.empty((n, q), dtype=np.float64)
    for start in range(0, n, _BLOCK):
        stop = min(n, start + _BLOCK)
        block = np.ascontiguousarray(clamped_similarity(x[start:stop], x))
        idx[start:stop], sim[start:stop] = kernels.topq_block(block, start, q)
    idx.setflags(write=False)
    sim.setflags(write=False)
    return NeighborGraph(idx, sim)


def nearest(g: NeighborGraph, i: int) -> int:
    if not 0 <= i < g.n:
        raise IndexError(f"sample index {i} out of range for n={g.n}")
    return int(g.neighbor_idx[i, 0])


def neighbor_label_distribution(g: NeighborGraph, labels, i: int, K: int | None = None) -> np.ndarray:
    """Fraction of the q neighbours of ``i`` carrying each pseudo-label."""
    if not 0 <= i < g.n:
        raise IndexError(f"sample index {i} out of range for n={g.n}")
    labels, K = _labels_and_k(labels, K)
    return np.bincount(labels[g.neighbor_idx[i]], minlength=K) / g.q


def neighbor_label_distributions(g: NeighborGraph, labels, K: int | None = None) -> np.ndarray:
    labels, K = _labels_and_k(labels, K)
    nl = labels[g.neighbor_idx]
    counts = np.zeros((g.n, K))
    np.add.at(counts, (np.repeat(np.arange(g.n), g.q), nl.ravel()), 1.0)
    return counts / g.q


def _labels_and_k(labels, K):
    if hasattr(labels, "centroids"):  # PseudoLabels
        return labels.labels, labels.centroids.shape[0]
    labels = np.asarray(labels, dtype=np.int64)
    if K is None:
        K = int(labels.max()) + 1
    return labels, K


def dump_graph_csv(g: NeighborGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "rank", "neighbor", "sim"])
        for i in range(g.n):
            for r in range(g.q):
                w.writerow([i, r, int(g.neighbor_idx[i, r]), repr(float(g.neighbor_sim[i, r]))])
