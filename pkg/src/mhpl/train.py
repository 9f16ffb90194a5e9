"""Adaptation objective and training loop.

Every loss returns ``(value, grads)`` where ``grads`` maps adapter parameter
names to arrays shaped like the parameters.  The head is never touched.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import FeatureSet
from .model import AdaptModel, log_softmax, softmax
from .pseudo import cluster_assign
from .query import BASELINES, SelectionResult, baseline_select, model_views, one_shot_query
from .graph import build_graph
from .rng import make_rng

SCHEMA_VERSION = 1


@dataclass
class TrainConfig:
    alpha: float = 3.0
    beta: float = 0.3
    lr: float = 0.001
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 30
    n_b: int | None = None  # iterations per epoch; None -> ceil(n / batch_size)
    q: int = 9
    seed: int = 0
    recluster_each_epoch: bool = True
    cluster_rounds: int = 1
    lr_power: float = 0.0  # lr * (1 + 10 p) ** -lr_power, p = progress in [0, 1]
    hidden: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.n_b is not None and self.n_b < 0:
            raise ValueError("n_b must be >= 0")

    def iters_per_epoch(self, n: int) -> int:
        return math.ceil(n / self.batch_size) if self.n_b is None else self.n_b


@dataclass
class LossBreakdown:
    nf_labeled: float = 0.0
    nf_unlabeled: float = 0.0
    ent: float = 0.0
    div: float = 0.0

    @property
    def total(self) -> float:
        return self.nf_labeled + self.nf_unlabeled + self.ent + self.div

    def as_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d


# --- per-term gradients w.r.t. logits -------------------------------------

def _weighted_ce(logits, targets, weights):
    """mean_i w_i * -log softmax(logits_i)[t_i] and its logit gradient."""
    B = logits.shape[0]
    if B == 0:
        return 0.0, np.zeros_like(logits)
    logp = log_softmax(logits)
    rows = np.arange(B)
    loss = float(-(weights * logp[rows, targets]).sum() / B)
    d = softmax(logits)
    d[rows, targets] -= 1.0
    return loss, d * (weights / B)[:, None]


def _entropy(logits):
    B = logits.shape[0]
    logp = log_softmax(logits)
    p = np.exp(logp)
    h = -(p * logp).sum(axis=1)
    # dH/dlogit_j = -p_j (log p_j + H)
    return float(h.mean()), -p * (logp + h[:, None]) / B


def _diversity(logits):
    """KL(mean prediction || uniform) over the batch."""
    B, K = logits.shape
    p = softmax(logits)
    pbar = p.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pbar > 0, pbar * np.log(K * pbar), 0.0)
        gk = np.where(pbar > 0, np.log(K * pbar), 0.0)
    inner = p @ gk
    return float(terms.sum()), p * (gk[None, :] - inner[:, None]) / B


# --- public losses ----------------------------------------------------------

def nf_loss_labeled(model: AdaptModel, x, y, np_weight, alpha: float):
    x, y, w = _labeled_batch(x, y, np_weight)
    logits, cache = model.forward(x)
    loss, dl = _weighted_ce(logits, y, alpha * w)
    return loss, model.backward(dl, cache)


def nf_loss_unlabeled(model: AdaptModel, x, pseudo, beta: float):
    if pseudo is None:
        raise ValueError("unlabeled samples need pseudo-labels")
    x = np.asarray(x, dtype=np.float64)
    pseudo = np.asarray(pseudo, dtype=np.int64)
    logits, cache = model.forward(x)
    loss, dl = _weighted_ce(logits, pseudo, np.full(len(pseudo), float(beta)))
    return loss, model.backward(dl, cache)


def entropy_loss(model: AdaptModel, x):
    logits, cache = model.forward(np.asarray(x, dtype=np.float64))
    loss, dl = _entropy(logits)
    return loss, model.backward(dl, cache)


def div_loss(model: AdaptModel, x):
    logits, cache = model.forward(np.asarray(x, dtype=np.float64))
    loss, dl = _diversity(logits)
    return loss, model.backward(dl, cache)


def _labeled_batch(x, y, w):
    if y is None or w is None:
        raise ValueError("labeled samples need a label and a neighbour-purity weight")
    x = np.asarray(x, dtype=np.float64).reshape(-1, np.shape(x)[-1])
    y = np.asarray(y, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    if not (len(x) == len(y) == len(w)):
        raise ValueError("labeled batch arrays differ in length")
    return x, y, w


def total_loss(model: AdaptModel, labeled, unlabeled, cfg: TrainConfig):
    """Sum of the four terms.

    ``labeled`` is ``(x, y, np_weight)`` and ``unlabeled`` is ``(x, pseudo)``;
    either may hold zero rows.  Entropy and diversity use the union batch.
    """
    xl, yl, wl = _labeled_batch(*labeled)
    xu = np.asarray(unlabeled[0], dtype=np.float64).reshape(-1, xl.shape[1])
    yu = np.asarray(unlabeled[1], dtype=np.int64)
    nl = len(xl)
    x = np.concatenate([xl, xu])
    if len(x) == 0:
        raise ValueError("empty batch")
    logits, cache = model.forward(x)
    parts = LossBreakdown()
    parts.nf_labeled, d1 = _weighted_ce(logits[:nl], yl, cfg.alpha * wl)
    parts.nf_unlabeled, d2 = _weighted_ce(logits[nl:], yu, np.full(len(yu), float(cfg.beta)))
    parts.ent, d3 = _entropy(logits)
    parts.div, d4 = _diversity(logits)
    dl = d3 + d4
    dl[:nl] += d1
    dl[nl:] += d2
    return parts, model.backward(dl, cache)


def sgd_momentum_step(params: dict, grads: dict, cfg: TrainConfig, velocity: dict | None, lr=None):
    """v <- momentum v + g ; theta <- theta - lr v.  Returns new (params, velocity)."""
    lr = cfg.lr if lr is None else lr
    velocity = velocity or {}
    new_p, new_v = {}, {}
    for k, theta in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(theta)
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {k} {theta.shape}")
        v = cfg.momentum * velocity[k] + g if k in velocity else g.copy()
        new_v[k] = v
        new_p[k] = theta - lr * v
    return new_p, new_v


# --- training loop ----------------------------------------------------------

@dataclass
class RunOptions:
    """Selection-side switches for one training run."""
    strategy: str = "mhpl"
    query_epoch: int = 0
    use_np: bool = True
    use_na: bool = True
    use_ndr: bool = True
    labeled_weight: str = "np"  # "np": alpha*NP ; "plain": weight 1 (standard cross-entropy)


@dataclass
class RunResult:
    model: AdaptModel
    selection: SelectionResult
    epochs: list = field(default_factory=list)
    final_acc: float | None = None
    source_acc: float | None = None
    wall_ms: float = 0.0

    def report(self, cfg: TrainConfig, opts: RunOptions) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": {**asdict(cfg), **{"run": asdict(opts)}},
            "selection": self.selection.to_dict(),
            "epochs": self.epochs,
            "source_acc": self.source_acc,
            "final_acc": self.final_acc,
            "wall_ms": self.wall_ms,
        }


def as_oracle(oracle):
    """Accept a callable, a mapping or an array of labels."""
    if callable(oracle):
        return oracle
    if isinstance(oracle, dict):
        def lookup(i):
            if i not in oracle:
                raise KeyError(f"no annotation for sample {i}")
            return oracle[i]
        return lookup
    arr = np.asarray(oracle)
    return lambda i: int(arr[i])


def select(fs: FeatureSet, model: AdaptModel, m: int, cfg: TrainConfig, opts: RunOptions) -> SelectionResult:
    if opts.strategy == "mhpl":
        return one_shot_query(fs, model, cfg.q, m, use_np=opts.use_np, use_na=opts.use_na,
                              use_ndr=opts.use_ndr, cluster_rounds=cfg.cluster_rounds)
    if opts.strategy not in BASELINES:
        raise ValueError(f"unknown strategy {opts.strategy!r}")
    feats, probs = model_views(fs, model)
    pl = cluster_assign(feats, probs, cfg.cluster_rounds)
    g = build_graph(feats, cfg.q)
    return baseline_select(opts.strategy, feats, probs, g, pl, m, seed=cfg.seed)


def epoch_batches(n: int, batch_size: int, n_b: int, rng):
    """Yield ``n_b`` index batches from a shuffled pass over ``range(n)``,
    reshuffling whenever the pass is exhausted."""
    perm, pos = rng.permutation(n), 0
    for _ in range(n_b):
        if pos >= n:
            perm, pos = rng.permutation(n), 0
        yield perm[pos:pos + batch_size]
        pos += batch_size


def accuracy(model: AdaptModel, fs: FeatureSet) -> float | None:
    if fs.labels is None:
        return None
    return float(np.mean(model.predict(fs.features) == fs.labels))


def run_mhpl(fs: FeatureSet, source_model: AdaptModel, cfg: TrainConfig, m: int, oracle=None,
             opts: RunOptions | None = None, selection: SelectionResult | None = None) -> RunResult:
    """Select ``m`` samples, label them through ``oracle`` and adapt.

    ``oracle`` defaults to the ground-truth labels of ``fs``.  A precomputed
    ``selection`` may be passed instead of selecting inside the run; it must
    carry NP scores when ``labeled_weight == "np"``.
    """
    t0 = time.perf_counter()
    opts = opts or RunOptions()
    n = fs.n
    if m > n:
        raise ValueError(f"budget m={m} exceeds n={n}")
    if oracle is None:
        if fs.labels is None:
            raise ValueError("no oracle and no ground-truth labels")
        oracle = fs.labels
    oracle = as_oracle(oracle)
    model = source_model.with_params({k: v.copy() for k, v in source_model.params.items()})
    if cfg.hidden and "U" not in model.params:
        model = AdaptModel.from_head(model.head_W, model.head_b, hidden=cfg.hidden, seed=cfg.seed)
    x = fs.features
    rng = make_rng(cfg.seed, "minibatch")
    n_b = cfg.iters_per_epoch(n)
    total_iters = cfg.epochs * n_b

    def fix_selection(sel):
        lab_idx = np.asarray(sel.selected, dtype=np.int64)
        labels = np.array([int(oracle(int(i))) for i in lab_idx], dtype=np.int64)
        if np.any((labels < 0) | (labels >= model.K)):
            raise ValueError("oracle returned a label outside [0, K)")
        if opts.labeled_weight == "np":
            w = sel.np_weights()
        elif opts.labeled_weight == "plain":
            w = np.full(len(lab_idx), 1.0 / cfg.alpha)
        else:
            raise ValueError(f"unknown labeled_weight {opts.labeled_weight!r}")
        is_lab = np.zeros(n, dtype=bool)
        is_lab[lab_idx] = True
        lab_y = np.full(n, -1, dtype=np.int64)
        lab_y[lab_idx] = labels
        lab_w = np.zeros(n)
        lab_w[lab_idx] = w
        return is_lab, lab_y, lab_w

    if selection is None and opts.query_epoch == 0:
        selection = select(fs, model, m, cfg, opts)
    if selection is not None:
        is_lab, lab_y, lab_w = fix_selection(selection)
    else:
        is_lab, lab_y, lab_w = np.zeros(n, bool), np.full(n, -1), np.zeros(n)

    result = RunResult(model=model, selection=selection, source_acc=accuracy(model, fs))
    velocity = None
    pseudo = None
    it = 0
    for epoch in range(cfg.epochs):
        if selection is None and epoch == opts.query_epoch:
            selection = select(fs, model, m, cfg, opts)
            is_lab, lab_y, lab_w = fix_selection(selection)
        if pseudo is None or cfg.recluster_each_epoch:
            feats, probs = model_views(fs, model)
            pseudo = cluster_assign(feats, probs, cfg.cluster_rounds).labels
        sums = LossBreakdown()
        for idx in epoch_batches(n, cfg.batch_size, n_b, rng):
            li, ui = idx[is_lab[idx]], idx[~is_lab[idx]]
            parts, grads = total_loss(model, (x[li], lab_y[li], lab_w[li]), (x[ui], pseudo[ui]), cfg)
            lr = cfg.lr * (1.0 + 10.0 * it / max(1, total_iters)) ** (-cfg.lr_power)
            params, velocity = sgd_momentum_step(model.params, grads, cfg, velocity, lr=lr)
            model = model.with_params(params)
            it += 1
            for k in ("nf_labeled", "nf_unlabeled", "ent", "div"):
                setattr(sums, k, getattr(sums, k) + getattr(parts, k))
        if n_b:
            for k in ("nf_labeled", "nf_unlabeled", "ent", "div"):
                setattr(sums, k, getattr(sums, k) / n_b)
        rec = {"epoch": epoch + 1, **sums.as_dict()}
        acc = accuracy(model, fs)
        if acc is not None:
            rec["target_acc"] = acc
        result.epochs.append(rec)

    if selection is None:  # query epoch beyond the schedule
        selection = select(fs, model, m, cfg, opts)
    result.model = model
    result.selection = selection
    result.final_acc = accuracy(model, fs)
    result.wall_ms = (time.perf_counter() - t0) * 1000.0
    return result
