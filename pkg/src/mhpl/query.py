"""Neighbour-ambient-uncertainty scoring, diversity-relaxed selection and
the classical active-learning baselines."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import FeatureSet, normalize_rows
from .graph import NeighborGraph, build_graph, neighbor_label_distributions
from .model import AdaptModel, softmax
from .pseudo import PseudoLabels, cluster_assign
from .rng import make_rng

SCHEMA_VERSION = 1
BASELINES = ("random", "entropy", "bvsb", "lc", "ctc", "coreset")
STRATEGIES = ("mhpl",) + BASELINES


class MissingInput(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class UncertaintyScores:
    np: np.ndarray
    na: np.ndarray
    nau: np.ndarray


@dataclass(eq=False)
class SelectionResult:
    selected: list
    strategy: str
    budget: int
    scores: UncertaintyScores | None = None
    fallback: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # (index, reason)
    seed: int | None = None

    def np_weights(self) -> np.ndarray:
        if self.scores is None:
            raise MissingInput("selection carries no neighbour-purity scores")
        return self.scores.np[np.asarray(self.selected, dtype=np.int64)]

    def to_dict(self) -> dict:
        def val(arr, i):
            return None if arr is None else float(arr[i])
        s = self.scores
        fb = self.fallback or [False] * len(self.selected)
        return {
            "schema_version": SCHEMA_VERSION,
            "strategy": self.strategy,
            "budget": self.budget,
            "seed": self.seed,
            "selected": [
                {"index": int(i),
                 "nau": val(s and s.nau, i), "np": val(s and s.np, i), "na": val(s and s.na, i),
                 "fallback": bool(f)}
                for i, f in zip(self.selected, fb)
            ],
            "skipped": [{"index": int(i), "reason": r} for i, r in self.skipped],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, n: int | None = None) -> SelectionResult:
        """Rebuild a result from JSON.  With ``n`` given, the snapshotted
        per-sample scores are restored (NaN for samples not selected)."""
        sel = [int(r["index"]) for r in d["selected"]]
        scores = None
        if n is not None and all(r.get("np") is not None for r in d["selected"]):
            arrs = {k: np.full(n, np.nan) for k in ("np", "na", "nau")}
            for r in d["selected"]:
                for k in arrs:
                    arrs[k][int(r["index"])] = r[k]
            scores = UncertaintyScores(arrs["np"], arrs["na"], arrs["nau"])
        return cls(selected=sel, strategy=d["strategy"], budget=int(d["budget"]), scores=scores,
                   fallback=[bool(r.get("fallback", False)) for r in d["selected"]],
                   skipped=[(int(r["index"]), r["reason"]) for r in d.get("skipped", [])],
                   seed=d.get("seed"))


def neighbor_purity(dist) -> float:
    """Entropy (nats) of a neighbour label distribution."""
    p = np.asarray(dist, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("neighbor_purity expects a probability vector")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum()) + 0.0


def neighbor_affinity(sims) -> float:
    s = np.asarray(sims, dtype=np.float64)
    if s.size == 0:
        raise ValueError("neighbor_affinity needs at least one similarity")
    return float(s.mean())


def _entropy_rows(p):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, p * np.log(p), 0.0)
    return -t.sum(axis=1) + 0.0


def compute_nau(fs: FeatureSet | None, g: NeighborGraph, pl: PseudoLabels) -> UncertaintyScores:
    n = g.n
    if pl.labels.shape[0] != n or (fs is not None and fs.n != n):
        raise ValueError("feature set, graph and pseudo-labels disagree on n")
    dist = neighbor_label_distributions(g, pl)
    purity = _entropy_rows(dist)
    affinity = g.neighbor_sim.mean(axis=1)
    return UncertaintyScores(purity, affinity, purity * affinity)


def descending_order(score) -> np.ndarray:
    """Indices by decreasing score, lower index first among equals."""
    return np.argsort(-np.asarray(score, dtype=np.float64), kind="stable").astype(np.int64)


def ndr_select(scores: UncertaintyScores | np.ndarray, g: NeighborGraph, m: int,
               rank_by: np.ndarray | None = None) -> SelectionResult:
    """Walk candidates by decreasing NAU and admit one only when its nearest
    neighbour is not already selected.  If the walk ends short of ``m`` the
    skipped candidates are admitted in the same order and flagged."""
    nau = scores.nau if isinstance(scores, UncertaintyScores) else np.asarray(scores)
    n = len(nau)
    if m < 0 or m > n:
        raise ValueError(f"budget m={m} outside [0, {n}]")
    key = nau if rank_by is None else rank_by
    order = descending_order(key)
    sel, fb, skipped = kernels.ndr_scan(order, np.ascontiguousarray(g.nearest_all(), dtype=np.int64), m)
    return SelectionResult(
        selected=[int(i) for i in sel], strategy="mhpl", budget=m,
        scores=scores if isinstance(scores, UncertaintyScores) else None,
        fallback=[bool(f) for f in fb],
        skipped=[(int(i), "nearest-selected") for i in skipped],
    )


def model_views(fs: FeatureSet, model: AdaptModel):
    """(normalized adapter features, class probabilities) of ``model`` on ``fs``."""
    logits, cache = model.forward(fs.features)
    feats = normalize_rows(fs.replace(features=cache["z"]))
    return feats, softmax(logits)


def one_shot_query(fs: FeatureSet, source_model: AdaptModel, q: int, m: int, *,
                   use_np: bool = True, use_na: bool = True, use_ndr: bool = True,
                   cluster_rounds: int = 1) -> SelectionResult:
    """Score and select the whole budget at once from ``source_model``.

    The ``use_*`` switches exist for ablations: without NP the ranking uses
    NA alone, without NA it uses NP alone, and without NDR the top-m ranked
    samples are taken directly.  The stored scores are always the full
    NP/NA/NAU triple.
    """
    feats, probs = model_views(fs, source_model)
    pl = cluster_assign(feats, probs, cluster_rounds)
    g = build_graph(feats, q)
    scores = compute_nau(feats, g, pl)
    if use_np and use_na:
        rank = scores.nau
    elif use_np:
        rank = scores.np
    elif use_na:
        rank = scores.na
    else:
        raise ValueError("at least one of NP / NA must be used for ranking")
    if use_ndr:
        res = ndr_select(scores, g, m, rank_by=rank)
    else:
        if m > fs.n:
            raise ValueError(f"budget m={m} exceeds n={fs.n}")
        res = SelectionResult([int(i) for i in descending_order(rank)[:m]], "mhpl", m,
                              scores=scores, fallback=[False] * m)
    return res


def baseline_select(strategy: str, fs: FeatureSet | None, probs: np.ndarray | None,
                    g: NeighborGraph | None, pl: PseudoLabels | None, m: int,
                    seed: int = 0) -> SelectionResult:
    n = _infer_n(fs, probs, g, pl)
    if m < 0 or m > n:
        raise ValueError(f"budget m={m} outside [0, {n}]")
    if strategy == "random":
        sel = make_rng(seed, "select-random").choice(n, size=m, replace=False)
    elif strategy in ("entropy", "bvsb", "lc"):
        if probs is None:
            raise MissingInput(f"{strategy} needs class probabilities")
        probs = np.asarray(probs, dtype=np.float64)
        if strategy == "entropy":
            sel = descending_order(_entropy_rows(probs))[:m]
        elif strategy == "bvsb":
            top2 = -np.sort(-probs, axis=1)[:, :2]
            sel = np.argsort(top2[:, 0] - top2[:, 1], kind="stable")[:m]
        else:
            sel = np.argsort(probs.max(axis=1), kind="stable")[:m]
    elif strategy == "ctc":
        if fs is None or pl is None:
            raise MissingInput("ctc needs features and pseudo-labels")
        sel = _closest_to_centers(fs.features, pl, m)
    elif strategy == "coreset":
        if fs is None:
            raise MissingInput("coreset needs features")
        sel = coreset_select(fs.features, m)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    scores = compute_nau(fs, g, pl) if (g is not None and pl is not None) else None
    return SelectionResult([int(i) for i in sel], strategy, m, scores=scores,
                           fallback=[False] * m, seed=seed)


def _infer_n(*things):
    for t in things:
        if t is None:
            continue
        if isinstance(t, np.ndarray):
            return t.shape[0]
        if isinstance(t, PseudoLabels):
            return t.labels.shape[0]
        return t.n
    raise MissingInput("no input to infer the sample count from")


def _closest_to_centers(x, pl: PseudoLabels, m):
    sim = np.einsum("ij,ij->i", x, pl.centroids[pl.labels])
    queues = []
    for k in range(pl.K):
        members = np.flatnonzero(pl.labels == k)
        queues.append(list(members[descending_order(sim[members])]))
    sel, pos = [], 0
    while len(sel) < m:
        progressed = False
        for qk in queues:
            if pos < len(qk) and len(sel) < m:
                sel.append(int(qk[pos]))
                progressed = True
        if not progressed:
            break
        pos += 1
    return sel


def coreset_select(x, m):
    """k-center greedy on 1 - clamped cosine, seeded at the sample farthest
    from the dataset mean direction."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if m == 0:
        return np.empty(0, dtype=np.int64)
    mu = x.mean(axis=0)
    nrm = np.linalg.norm(mu)
    first = 0 if nrm == 0 else int(np.argmax(1.0 - np.clip(x @ (mu / nrm), 0.0, 1.0)))
    return kernels.kcenter_greedy(x, first, m)


def write_annotation_template(result: SelectionResult, path, labels=None) -> None:
    """``index,label`` CSV for the selected samples; labels blank unless given."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "label"])
        for i in result.selected:
            w.writerow([i, "" if labels is None else int(labels[i])])


def read_annotations(path) -> dict[int, int]:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["index", "label"]:
            raise ValueError(f"{path}: header must be 'index,label'")
        for row in reader:
            if row["label"] is None or row["label"].strip() == "":
                continue
            out[int(row["index"])] = int(row["label"])
    return out
