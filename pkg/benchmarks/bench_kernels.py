"""Timing comparison of the two kernel backends (BLAS-based numpy vs numba).

Run: python benchmarks/bench_kernels.py [--side 64] [--batch 8] [--repeat 3]
"""

import argparse
import time

import numpy as np

from finemotion import kernels_numpy


def _load_numba():
    try:
        from finemotion import kernels_numba
        return kernels_numba
    except ImportError:
        return None


def bench(fn, args, repeat):
    fn(*args)                                     # warm-up (numba compilation)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--side", type=int, default=64)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--channels", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    B, N, C = args.batch, args.side, args.channels
    x = rng.standard_normal((B, N, N, C))
    w = rng.standard_normal((3, 3, C, C))
    b = rng.standard_normal(C)
    gout = rng.standard_normal((B, N, N, C))

    numba = _load_numba()
    backends = [("numpy", kernels_numpy)] + ([("numba", numba)] if numba else [])
    if numba is None:
        print("numba unavailable; benchmarking the numpy backend only")

    rows = []
    for name, mod in backends:
        t_fwd = bench(mod.conv2d_forward, (x, w, b), args.repeat)
        t_bwd = bench(mod.conv2d_backward, (x, w, gout), args.repeat)
        out, arg = mod.maxpool_forward(x, 2)
        gp = rng.standard_normal(out.shape)
        t_pf = bench(mod.maxpool_forward, (x, 2), args.repeat)
        t_pb = bench(mod.maxpool_backward, (x.shape, arg, gp, 2), args.repeat)
        rows.append((name, t_fwd, t_bwd, t_pf, t_pb))

    print(f"{'backend':<10}{'conv fwd':>12}{'conv bwd':>12}"
          f"{'pool fwd':>12}{'pool bwd':>12}")
    for name, *ts in rows:
        print(f"{name:<10}" + "".join(f"{t * 1e3:>10.2f}ms" for t in ts))
    if len(rows) == 2:
        print("speedup (numpy/numba): "
              + "  ".join(f"{a / b:.2f}x" for a, b in
                          zip(rows[0][1:], rows[1][1:])))


if __name__ == "__main__":
    main()
