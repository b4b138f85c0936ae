#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs the training-epoch kernel and the Mahalanobis quadratic-form kernel
on representative shapes and reports median wall time per call plus the
speedup. The numba path needs one warmup call for JIT compilation.

Usage:
    python benchmarks/benchmark_kernels.py [--iterations N]

Force the numpy path in the library itself with OE_FORGE_NO_NUMBA=1; this
script always times both implementations directly.
"""

import argparse
import time

import numpy as np

from oe_forge import _kernels


def time_fn(fn, args_factory, iterations, warmup=2):
    for _ in range(warmup):
        fn(*args_factory())
    times = []
    for _ in range(iterations):
        args = args_factory()
        start = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def epoch_args(rng, n_id, dim, C, batch):
    def factory():
        W = rng.normal(size=(C, dim)) * 0.01
        b = np.zeros(C)
        steps = (n_id + batch - 1) // batch
        return [
            W, b, np.zeros_like(W), np.zeros_like(W), np.zeros_like(b),
            np.zeros_like(b), 0,
            rng.normal(size=(n_id, dim)),
            rng.integers(0, C, size=n_id),
            rng.permutation(n_id),
            rng.normal(size=(steps * batch, dim)),
            0.5, 1e-3, 0.9, 0.999, 1e-8, batch, batch,
        ]
    return factory


def quadform_args(rng, n, dim, C):
    def factory():
        A = rng.normal(size=(dim, dim))
        L = np.linalg.cholesky(A @ A.T + dim * np.eye(dim))
        return [rng.normal(size=(n, dim)), rng.normal(size=(C, dim)), L]
    return factory


def report(name, numpy_time, numba_time):
    speedup = numpy_time / numba_time if numba_time > 0 else float("inf")
    print(f"{name:<42} {numpy_time * 1e3:>10.3f} ms {numba_time * 1e3:>10.3f} ms "
          f"{speedup:>7.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--iterations", type=int, default=20)
    args = parser.parse_args()

    if not _kernels.NUMBA_ACTIVE:
        raise SystemExit(
            "numba path is inactive (missing numba or OE_FORGE_NO_NUMBA set); "
            "nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<42} {'numpy':>13} {'numba':>13} {'speedup':>8}")
    print("-" * 80)

    cases = [
        ("train_epoch 1600x32, C=8, batch 32", epoch_args(rng, 1600, 32, 8, 32)),
        ("train_epoch 4096x64, C=10, batch 32", epoch_args(rng, 4096, 64, 10, 32)),
        ("mahalanobis_quadforms 2000x32, C=8", quadform_args(rng, 2000, 32, 8)),
        ("mahalanobis_quadforms 10000x64, C=16", quadform_args(rng, 10000, 64, 16)),
    ]
    for name, factory in cases:
        fn_numpy = (_kernels.train_epoch_numpy if name.startswith("train")
                    else _kernels.mahalanobis_quadforms_numpy)
        fn_numba = (_kernels.train_epoch_numba if name.startswith("train")
                    else _kernels.mahalanobis_quadforms_numba)
        t_numpy = time_fn(fn_numpy, factory, args.iterations)
        t_numba = time_fn(fn_numba, factory, args.iterations)
        report(name, t_numpy, t_numba)


if __name__ == "__main__":
    main()
