"""Finite-difference harness with a loss evaluator written independently of
the package forward pass."""
import numpy as np

from mhpl.model import AdaptModel
from mhpl.train import (TrainConfig, div_loss, entropy_loss, nf_loss_labeled, nf_loss_unlabeled,
                        total_loss)

STEP = 1e-5
TOL = 1e-4
FLOOR = 1e-6  # gradients below this are compared at TOL * FLOOR absolute


def _logits(p, W, b, x):
    z = x @ p["A"].T + p["a"]
    if "U" in p:
        pre = x @ p["U"].T + p["c"]
        z = z + np.where(pre > 0, pre, 0.1 * pre) @ p["V"].T
    return z @ W.T + b


def _logp(l):
    s = l - l.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def _ce(l, y, w):
    if len(y) == 0:
        return 0.0
    return float(np.mean(-w * _logp(l)[np.arange(len(y)), y]))


def _ent(l):
    lp = _logp(l)
    return float(np.mean(-(np.exp(lp) * lp).sum(axis=1)))


def _div(l):
    pbar = np.exp(_logp(l)).mean(axis=0)
    K = l.shape[1]
    return float(sum(v * np.log(K * v) for v in pbar if v > 0))


def reference_losses(case, p):
    W, b, cfg = case["W"], case["b"], case["cfg"]
    xl, yl, wl = case["lab"]
    xu, yu = case["unl"]
    ll = _logits(p, W, b, xl)
    lu = _logits(p, W, b, xu)
    both = np.concatenate([ll, lu])
    parts = {
        "nf_labeled": _ce(ll, yl, cfg.alpha * wl),
        "nf_unlabeled": _ce(lu, yu, np.full(len(yu), cfg.beta)),
        "ent": _ent(both),
        "div": _div(both),
    }
    return {
        "nf_loss_labeled": parts["nf_labeled"],
        "nf_loss_unlabeled": parts["nf_unlabeled"],
        "entropy_loss": _ent(ll),
        "div_loss": _div(ll),
        "total_loss": sum(parts.values()),
    }


def analytic(case, name, model):
    cfg = case["cfg"]
    xl, yl, wl = case["lab"]
    xu, yu = case["unl"]
    if name == "nf_loss_labeled":
        return nf_loss_labeled(model, xl, yl, wl, cfg.alpha)
    if name == "nf_loss_unlabeled":
        return nf_loss_unlabeled(model, xu, yu, cfg.beta)
    if name == "entropy_loss":
        return entropy_loss(model, xl)
    if name == "div_loss":
        return div_loss(model, xl)
    parts, g = total_loss(model, case["lab"], case["unl"], cfg)
    return parts.total, g


LOSSES = ("nf_loss_labeled", "nf_loss_unlabeled", "entropy_loss", "div_loss", "total_loss")


def random_case(seed):
    """A model away from identity init plus labeled and unlabeled batches.
    Leaky kinks are kept at least 1e-3 away from every pre-activation."""
    rng = np.random.default_rng(seed)
    d, K, h = int(rng.integers(2, 9)), int(rng.integers(2, 5)), int(rng.integers(0, 7))
    W, b = rng.normal(size=(K, d)), rng.normal(size=K)
    while True:
        p = {"A": np.eye(d) + 0.3 * rng.normal(size=(d, d)), "a": 0.1 * rng.normal(size=d)}
        if h:
            p.update(U=rng.normal(size=(h, d)), c=0.1 * rng.normal(size=h), V=0.3 * rng.normal(size=(d, h)))
        nl, nu = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        x = rng.normal(size=(nl + nu, d))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        if not h or np.abs(x @ p["U"].T + p["c"]).min() > 1e-3:
            break
    cfg = TrainConfig(alpha=float(rng.uniform(0.5, 4)), beta=float(rng.uniform(0, 1)))
    return {
        "W": W, "b": b, "cfg": cfg, "params": p,
        "lab": (x[:nl], rng.integers(0, K, nl), rng.uniform(0, np.log(K), nl)),
        "unl": (x[nl:], rng.integers(0, K, nu)),
    }


def check_case(case):
    """Return the worst relative error over all losses and parameters, and
    the largest value mismatch against the reference evaluator."""
    model = AdaptModel(case["W"], case["b"], case["params"])
    ref0 = reference_losses(case, case["params"])
    grads, value_gap = {}, 0.0
    for name in LOSSES:
        val, grads[name] = analytic(case, name, model)
        value_gap = max(value_gap, abs(val - ref0[name]))
    worst = 0.0
    for key, theta in case["params"].items():
        for j in np.ndindex(theta.shape):
            plus = {k: v.copy() for k, v in case["params"].items()}
            minus = {k: v.copy() for k, v in case["params"].items()}
            plus[key][j] += STEP
            minus[key][j] -= STEP
            rp, rm = reference_losses(case, plus), reference_losses(case, minus)
            for name in LOSSES:
                fd = (rp[name] - rm[name]) / (2 * STEP)
                a = grads[name][key][j]
                worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), FLOOR))
    return worst, value_gap
