"""Numba vs numpy timings for the two hot kernels.

    python benchmarks/bench_kernels.py [--steps N] [--pixels N] [--repeat R]

Both backends are imported in one process (``kernels.*_numba`` and
``kernels.*_numpy``), so ``PNPULA_DISABLE_NUMBA`` does not matter here.
"""
import argparse
import time

import numpy as np

from pnpula import kernels


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def dense_chain_case(n):
    rng = np.random.default_rng(0)
    d, K = 2, 3
    args = dict(
        x0=np.zeros(d), noise=rng.standard_normal((n, d)), delta=0.01, alpha=1.0, eps=0.1, lam=0.2,
        lo=-10.0, hi=10.0, projected=False, H=np.eye(d), b=np.full(d, 0.3),
        log_w=np.log(np.full(K, 1 / K)), means=rng.standard_normal((K, d)), s2=np.full(K, 0.5),
    )
    return lambda f: f(**args)


def separable_gmm_case(n):
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 2, n)
    log_w, means, s2 = np.log(np.full(3, 1 / 3)), np.array([0.2, 0.5, 0.8]), np.full(3, 0.0025)
    return lambda f: f(x, log_w, means, s2, (5 / 255) ** 2)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=200_000, help="dense chain length")
    p.add_argument("--pixels", type=int, default=64 * 64, help="image size for the mixture denoiser")
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if kernels.dense_chain_numba is None:
        print("numba backend unavailable; nothing to compare")
        return []
    rows = []
    for name, case, nb, npf, size in [
        ("dense_chain", dense_chain_case(args.steps), kernels.dense_chain_numba, kernels.dense_chain_numpy,
         f"{args.steps} steps, d=2, K=3"),
        ("separable_gmm", separable_gmm_case(args.pixels), kernels.separable_gmm_numba,
         kernels.separable_gmm_numpy, f"{args.pixels} pixels, K=3"),
    ]:
        case(nb)  # compile
        t_nb = best_of(lambda: case(nb), args.repeat)
        t_np = best_of(lambda: case(npf), max(1, args.repeat // 2) if name == "dense_chain" else args.repeat)
        rows.append((name, size, t_np, t_nb))
        print(f"{name:14s} {size:28s} numpy {t_np * 1e3:10.3f} ms   numba {t_nb * 1e3:9.3f} ms   "
              f"speedup {t_np / t_nb:7.1f}x")
    return rows


if __name__ == "__main__":
    main()
