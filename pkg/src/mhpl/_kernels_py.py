"""Numpy implementations of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def topq_block(sim, row_start, q):
    sim = np.array(sim, dtype=np.float64, copy=True)
    rows = sim.shape[0]
    sim[np.arange(rows), row_start + np.arange(rows)] = -np.inf
    # stable sort on the negated values keeps the lower column first among ties
    order = np.argsort(-sim, axis=1, kind="stable")[:, :q]
    return order.astype(np.int64), np.take_along_axis(sim, order, axis=1)


def ndr_scan(order, nearest, m):
    member = np.zeros(len(nearest), dtype=bool)
    sel, skipped = [], []
    for c in order:
        if len(sel) >= m:
            break
        if member[nearest[c]]:
            skipped.append(c)
        else:
            sel.append(c)
            member[c] = True
    fb = [False] * len(sel)
    for c in skipped:
        if len(sel) >= m:
            break
        sel.append(c)
        fb.append(True)
    return (np.asarray(sel, dtype=np.int64), np.asarray(fb, dtype=bool),
            np.asarray(skipped, dtype=np.int64))


def kcenter_greedy(x, first, m):
    n = x.shape[0]
    sel = np.empty(m, dtype=np.int64)
    if m == 0:
        return sel
    mind = np.full(n, np.inf)
    c = first
    for t in range(m):
        sel[t] = c
        if t == m - 1:
            break
        dist = 1.0 - np.clip(x @ x[c], 0.0, 1.0)
        np.minimum(mind, dist, out=mind)
        mind[sel[: t + 1]] = -1.0
        c = int(np.argmax(mind))
    return sel
