"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 4000] [--d 64] [--repeat 3]
"""
import argparse
import time

import numpy as np

from mhpl import _kernels_py as pyk

try:
    from mhpl import _kernels as ck
except ImportError:
    ck = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=4000)
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--q", type=int, default=9)
    ap.add_argument("--m", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    x = rng.normal(size=(args.n, args.d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    block = np.ascontiguousarray(np.clip(x[:1024] @ x.T, 0.0, 1.0))
    order = rng.permutation(args.n).astype(np.int64)
    near = rng.integers(0, args.n, args.n).astype(np.int64)

    kernels = {
        "topq_block (1024 rows)": lambda k: k.topq_block(block, 0, args.q),
        "ndr_scan": lambda k: k.ndr_scan(order, near, args.m),
        "kcenter_greedy": lambda k: k.kcenter_greedy(x, 0, args.m),
    }
    print(f"n={args.n} d={args.d} q={args.q} m={args.m}, best of {args.repeat}")
    print(f"{'kernel':26s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}")
    for name, fn in kernels.items():
        tp, outp = best_of(lambda: fn(pyk), args.repeat)
        if ck is None:
            print(f"{name:26s} {tp * 1e3:9.2f}ms {'n/a':>10s}")
            continue
        tc, outc = best_of(lambda: fn(ck), args.repeat)
        outp = outp if isinstance(outp, tuple) else (outp,)
        outc = outc if isinstance(outc, tuple) else (outc,)
        assert all(np.array_equal(np.asarray(a), np.asarray(b)) for a, b in zip(outp, outc)), name
        print(f"{name:26s} {tp * 1e3:9.2f}ms {tc * 1e3:9.2f}ms {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
