import numpy as np
import pytest

from mhpl.data import FeatureSet, normalize_rows


def random_unit(n, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def brute_force_topq(x, q):
    """O(n^2) reference: per-pair dot products, sort by (-sim, index)."""
    n = len(x)
    idx = np.empty((n, q), dtype=np.int64)
    sim = np.empty((n, q))
    for i in range(n):
        cand = []
        for j in range(n):
            if j == i:
                continue
            s = min(1.0, max(0.0, float(sum(a * b for a, b in zip(x[i], x[j])))))
            cand.append((-s, j))
        cand.sort()
        idx[i] = [j for _, j in cand[:q]]
        sim[i] = [-s for s, _ in cand[:q]]
    return idx, sim


@pytest.fixture
def unit_set():
    def make(n, d, seed=0, K=3):
        return normalize_rows(FeatureSet(random_unit(n, d, seed), K=K))
    return make


# acceptance summary -----------------------------------------------------------

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}")
