"""Two-domain covariate-shift benchmarks on the unit sphere.

Class means are placed around a random anchor direction; target samples
are drawn either from the source means (tagged source-like) or from means
displaced towards the next class (tagged target-like).  A small share of
target samples gets inflated noise and ends up far from every cluster.  The labelling
function is shared between domains, only the input distribution moves.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .data import DomainTag, FeatureSet, normalize_rows, save_feature_set
from .model import AdaptModel, softmax
from .rng import make_rng

_MAX_TRIES = 200


class SeparationInfeasible(ValueError):
    pass


class SourceFitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ShiftSpec:
    K: int = 3
    d: int = 16
    n_s: int = 600
    n_t: int = 600
    sigma: float = 0.08
    shift: float = 4.0
    target_like_frac: float = 0.5
    seed: int = 0
    # distance from the anchor of each class mean, before normalization
    spread: float = 0.5
    # share of target samples drawn with outlier_scale * sigma noise
    outlier_frac: float = 0.05
    outlier_scale: float = 3.0

    def __post_init__(self):
        if self.K < 2 or self.d < 2:
            raise ValueError("need K >= 2 and d >= 2")
        if not self.sigma > 0 or self.shift < 0 or self.spread <= 0:
            raise ValueError("need sigma > 0, shift >= 0, spread > 0")
        if not 0.0 <= self.target_like_frac <= 1.0:
            raise ValueError("target_like_frac must lie in [0, 1]")
        if not 0.0 <= self.outlier_frac <= 1.0 or self.outlier_scale <= 0:
            raise ValueError("outlier_frac must lie in [0, 1] and outlier_scale be > 0")
        if self.n_s < 1 or self.n_t < 1:
            raise ValueError("sample counts must be >= 1")

    @property
    def min_separation(self) -> float:
        return 4.0 * self.sigma / math.sqrt(self.d)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def class_means(spec: ShiftSpec, rng) -> np.ndarray:
    K, d = spec.K, spec.d
    if d == 2 and 2.0 * math.sin(math.pi / K) < spec.min_separation:
        raise SeparationInfeasible(
            f"{K} classes cannot be {spec.min_separation:.4f} apart on the unit circle")
    for _ in range(_MAX_TRIES):
        if K + 1 <= d:
            # orthonormal offsets around the anchor: all pairs equally spaced
            q, _ = np.linalg.qr(rng.normal(size=(d, K + 1)))
            anchor, offsets = q[:, 0], q[:, 1:].T
        else:
            anchor = _unit(rng.normal(size=d))
            g = rng.normal(size=(K, d))
            g -= np.outer(g @ anchor, anchor)
            offsets = _unit(g)
        means = _unit(anchor + spec.spread * offsets)
        gap = np.linalg.norm(means[:, None] - means[None], axis=-1)
        gap[np.diag_indices(K)] = np.inf
        if gap.min() >= spec.min_separation:
            return means
    raise SeparationInfeasible(
        f"could not place {K} class means in d={d} with pairwise separation "
        f">= {spec.min_separation:.4f} after {_MAX_TRIES} attempts; use fewer classes or more dimensions")


def _balanced_labels(n, K, rng):
    labels = np.arange(n) % K
    return rng.permutation(labels)


def generate(spec: ShiftSpec) -> tuple[FeatureSet, FeatureSet]:
    rng = make_rng(spec.seed, "synth")
    means = class_means(spec, rng)
    K, d, s = spec.K, spec.d, spec.sigma
    toward = _unit(np.roll(means, -1, axis=0) - means)
    shifted = _unit(means + spec.shift * s * toward)

    ys = _balanced_labels(spec.n_s, K, rng)
    xs = means[ys] + rng.normal(0.0, s, size=(spec.n_s, d))

    yt = _balanced_labels(spec.n_t, K, rng)
    n_tl = int(round(spec.target_like_frac * spec.n_t))
    tags = np.full(spec.n_t, int(DomainTag.SOURCE_LIKE), dtype=np.uint8)
    tags[rng.permutation(spec.n_t)[:n_tl]] = int(DomainTag.TARGET_LIKE)
    centre = np.where((tags == DomainTag.TARGET_LIKE)[:, None], shifted[yt], means[yt])
    noise = np.full(spec.n_t, s)
    noise[rng.permutation(spec.n_t)[:int(round(spec.outlier_frac * spec.n_t))]] *= spec.outlier_scale
    xt = centre + rng.normal(0.0, 1.0, size=(spec.n_t, d)) * noise[:, None]

    source = normalize_rows(FeatureSet(xs, K=K, labels=ys,
                                       domain_tags=np.full(spec.n_s, int(DomainTag.SOURCE_LIKE))))
    target = normalize_rows(FeatureSet(xt, K=K, labels=yt, domain_tags=tags))
    return source, target


def manifest(spec: ShiftSpec, source: FeatureSet, target: FeatureSet) -> dict:
    def counts(fs):
        return [int(c) for c in np.bincount(fs.labels, minlength=fs.K)]
    return {
        "schema_version": 1,
        "spec": asdict(spec),
        "seed": spec.seed,
        "per_class_counts": {"source": counts(source), "target": counts(target)},
        "tag_counts": {
            "source_like": int(np.sum(target.domain_tags == DomainTag.SOURCE_LIKE)),
            "target_like": int(np.sum(target.domain_tags == DomainTag.TARGET_LIKE)),
        },
    }


def write_benchmark(spec: ShiftSpec, out_dir) -> dict:
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    source, target = generate(spec)
    save_feature_set(source, out / "source.fmx")
    save_feature_set(target, out / "target.fmx")
    man = manifest(spec, source, target)
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


def train_source_head(source: FeatureSet, lr: float = 0.5, epochs: int = 500, seed: int = 0,
                      momentum: float = 0.9, smoothing: float = 0.1,
                      min_acc: float = 0.99) -> AdaptModel:
    """Full-batch softmax regression on the source features.

    Targets are label-smoothed by ``smoothing`` so the head stays calibrated
    instead of driving its logits to infinity on separable data.

    Returns an identity-adapter model wrapping the fitted head.  Falling
    short of ``min_acc`` training accuracy emits ``SourceFitWarning``.
    """
    if source.labels is None:
        raise ValueError("source set must be labeled")
    x, y, K = source.features, source.labels, source.K
    n, d = x.shape
    rng = make_rng(seed, "source-head")
    W = rng.normal(0.0, 0.01, size=(K, d))
    b = np.zeros(K)
    vW, vb = np.zeros_like(W), np.zeros_like(b)
    onehot = (1.0 - smoothing) * np.eye(K)[y] + smoothing / K
    for _ in range(epochs):
        g = (softmax(x @ W.T + b) - onehot) / n
        vW = momentum * vW + g.T @ x
        vb = momentum * vb + g.sum(axis=0)
        W -= lr * vW
        b -= lr * vb
    acc = float(np.mean(np.argmax(x @ W.T + b, axis=1) == y))
    if acc < min_acc:
        warnings.warn(f"source head reached {acc:.4f} training accuracy (< {min_acc})",
                      SourceFitWarning, stacklevel=2)
    return AdaptModel.from_head(W, b)
