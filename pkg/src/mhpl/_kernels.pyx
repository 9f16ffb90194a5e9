# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics must stay identical to _kernels_py."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def topq_block(const double[:, ::1] sim, Py_ssize_t row_start, Py_ssize_t q):
    """Per-row top-q columns of a similarity block, self column excluded.

    Scans columns in increasing index order and admits a column only on a
    strictly larger value, so ties keep the lower index.
    """
    cdef Py_ssize_t rows = sim.shape[0], n = sim.shape[1]
    cdef Py_ssize_t r, j, k, self_col, filled
    cdef double v
    out_idx = np.empty((rows, q), dtype=np.int64)
    out_sim = np.empty((rows, q), dtype=np.float64)
    cdef cnp.int64_t[:, ::1] bi = out_idx
    cdef double[:, ::1] bs = out_sim
    for r in range(rows):
        self_col = row_start + r
        filled = 0
        for j in range(n):
            if j == self_col:
                continue
            v = sim[r, j]
            if filled < q:
                k = filled
                filled += 1
            elif v > bs[r, q - 1]:
                k = q - 1
            else:
                continue
            while k > 0 and v > bs[r, k - 1]:
                bs[r, k] = bs[r, k - 1]
                bi[r, k] = bi[r, k - 1]
                k -= 1
            bs[r, k] = v
            bi[r, k] = j
    return out_idx, out_sim


def ndr_scan(const cnp.int64_t[::1] order, const cnp.int64_t[::1] nearest, Py_ssize_t m):
    """Greedy nearest-neighbour relaxation over a precomputed candidate order.

    Returns (selected, is_fallback, skipped) as int64 / bool / int64 arrays.
    """
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t t, c, n_sel = 0, n_skip = 0
    sel = np.empty(m, dtype=np.int64)
    fb = np.zeros(m, dtype=np.bool_)
    skipped = np.empty(n, dtype=np.int64)
    in_set = np.zeros(nearest.shape[0], dtype=np.uint8)
    cdef cnp.int64_t[::1] s = sel
    cdef cnp.uint8_t[::1] f = fb.view(np.uint8)
    cdef cnp.int64_t[::1] sk = skipped
    cdef cnp.uint8_t[::1] member = in_set
    for t in range(n):
        if n_sel >= m:
            break
        c = order[t]
        if member[nearest[c]]:
            sk[n_skip] = c
            n_skip += 1
        else:
            s[n_sel] = c
            member[c] = 1
            n_sel += 1
    t = 0
    while n_sel < m and t < n_skip:
        s[n_sel] = sk[t]
        f[n_sel] = 1
        n_sel += 1
        t += 1
    return sel[:n_sel], fb[:n_sel], skipped[:n_skip]


def kcenter_greedy(const double[:, ::1] x, Py_ssize_t first, Py_ssize_t m):
    """Greedy k-center on distance 1 - max(0, <x_i, x_j>) starting from ``first``.

    Similarities come from the same BLAS matvec the numpy fallback uses, so
    both backends see identical distances; the min-update and argmax are fused.
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i, t, best, c
    cdef double dot, dist, best_val
    xa = np.asarray(x)
    sel = np.empty(m, dtype=np.int64)
    mind = np.full(n, np.inf)
    cdef cnp.int64_t[::1] s = sel
    cdef double[::1] md = mind
    cdef double[::1] sim
    if m == 0:
        return sel
    c = first
    for t in range(m):
        s[t] = c
        if t == m - 1:
            break
        sim = xa @ xa[c]
        for i in range(n):
            dot = sim[i]
            if dot < 0.0:
                dot = 0.0
            elif dot > 1.0:
                dot = 1.0
            dist = 1.0 - dot
            if dist < md[i]:
                md[i] = dist
        md[c] = -1.0
        best = 0
        best_val = md[0]
        for i in range(1, n):
            if md[i] > best_val:
                best_val = md[i]
                best = i
        c = best
    return sel
