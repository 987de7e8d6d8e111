"""Compiled vs numpy kernels: per-kernel timings and an end-to-end PMVN run.

    python3 benchmarks/bench_kernels.py --m 128 --N 2000 --repeat 5

Also checks that both backends give bitwise-equal outputs on every input
they are timed on.
"""
import argparse
import statistics
import time

import numpy as np

from excursion import kernels
from excursion.field import MaternParams, assemble_cov, gen_geometry
from excursion.pmvn import IntegrationLimits, QmcPlan, pmvn
from excursion.tiles import from_dense, tiled_cholesky


def _time(fn, repeat):
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(out)


def _inputs(m, N, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, m))
    S = X @ X.T / m + np.eye(m)
    L = np.linalg.cholesky(S)
    R = rng.random((m, N))
    A = rng.normal(-1.0, 0.5, (m, N))
    B = A + rng.exponential(2.0, (m, N))
    Y = rng.standard_normal((m, N))
    return L, R, A, B, Y


def bench_kernels(m, N, repeat):
    L, R, A0, B0, Y = _inputs(m, N)
    rows, outs = [], {}
    for name in kernels.available():
        with kernels.use(name):
            t_unif = _time(lambda: kernels.uniform_tile(12345, 0, m, 0, N), repeat)

            def gemm():
                A, B = A0.copy(), B0.copy()
                kernels.gemm_update(A, B, L, Y)
                return A, B

            def qmc():
                A, B, Yo = A0.copy(), B0.copy(), np.zeros((m, N))
                mant, expo = np.ones(N), np.zeros(N, dtype=np.int64)
                kernels.qmc_tile(L, R, A, B, Yo, mant, expo)
                return Yo, mant, expo

            t_gemm = _time(gemm, repeat)
            t_qmc = _time(qmc, repeat)
            outs[name] = (kernels.uniform_tile(12345, 0, m, 0, N), *gemm(), *qmc())
        rows.append((name, t_unif, t_gemm, t_qmc))
    same = None
    if len(outs) == 2:
        a, b = outs.values()
        same = all(np.array_equal(x, y) for x, y in zip(a, b))
    return rows, same


def bench_pmvn(n, N, m, repeat):
    geom = gen_geometry("uniform-random", n, seed=0)
    L = tiled_cholesky(from_dense(assemble_cov(geom, MaternParams(1.0, 0.1, 0.5)), m, True))
    lim = IntegrationLimits(np.full(n, -np.inf), np.full(n, 1.0))
    plan = QmcPlan(N, m)
    rows, vals = [], {}
    for name in kernels.available():
        with kernels.use(name):
            vals[name] = pmvn(lim, L, plan).value
            rows.append((name, _time(lambda: pmvn(lim, L, plan), repeat)))
    return rows, len(set(vals.values())) == 1


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=128)
    ap.add_argument("--N", type=int, default=2000)
    ap.add_argument("--n", type=int, default=512, help="dimension of the end-to-end PMVN run")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rows, same = bench_kernels(args.m, args.N, args.repeat)
    print(f"kernel medians (ms), m={args.m} N={args.N}")
    print(f"{'backend':<10}{'uniform':>10}{'gemm':>10}{'qmc_tile':>10}")
    for name, *t in rows:
        print(f"{name:<10}" + "".join(f"{v:>10.2f}" for v in t))
    if same is not None:
        print(f"bitwise equal outputs: {same}")

    rows, same = bench_pmvn(args.n, args.N, args.m, args.repeat)
    print(f"\npmvn medians (ms), n={args.n} N={args.N} m={args.m}")
    base = dict(rows).get("python")
    for name, t in rows:
        ratio = f"  speedup x{base / t:.2f}" if base else ""
        print(f"{name:<10}{t:>10.2f}{ratio}")
    print(f"identical estimates: {same}")


if __name__ == "__main__":
    main()
