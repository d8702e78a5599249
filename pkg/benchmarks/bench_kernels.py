#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--size 64] [--channels 4] [--repeats 3]
"""

import argparse
import time

import numpy as np

from featreg.kernels import numpy_backend

try:
    from featreg.kernels import _ckernels
except ImportError:
    _ckernels = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--channels", type=int, default=4)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    n, c = args.size, args.channels
    rng = np.random.default_rng(0)
    ref = rng.standard_normal((n, n, n, c)).astype(np.float32)
    mov = rng.standard_normal((n, n, n, c)).astype(np.float32)
    field = rng.uniform(-2, 2, (n, n, n, 3)).astype(np.float32)
    offs = np.stack(np.meshgrid(*[[-4, -2, 0, 2, 4]] * 3, indexing="ij"),
                    axis=-1).reshape(-1, 3)

    cases = [
        ("warp_trilinear",
         lambda: numpy_backend.warp_trilinear(mov, field),
         (lambda: _ckernels.warp_trilinear(mov, field)) if _ckernels else None),
        ("ssd_energy_gradient",
         lambda: numpy_backend.ssd_energy_gradient(ref, mov, field),
         (lambda: _ckernels.ssd_energy_gradient(ref, mov, field)) if _ckernels else None),
        ("cost_volume_ssd (125 cands)",
         lambda: numpy_backend.cost_volume_ssd(ref, mov, 4, offs),
         (lambda: _ckernels.cost_volume_ssd(ref, mov, 4, offs.astype(np.int64)))
         if _ckernels else None),
    ]

    print(f"volume {n}^3 x {c} channels, best of {args.repeats}")
    print(f"{'kernel':32s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}")
    for name, py_fn, cy_fn in cases:
        t_py = timeit(py_fn, args.repeats)
        if cy_fn is None:
            print(f"{name:32s} {t_py * 1e3:9.1f}ms {'n/a':>10s} {'':>8s}")
            continue
        t_cy = timeit(cy_fn, args.repeats)
        print(f"{name:32s} {t_py * 1e3:9.1f}ms {t_cy * 1e3:9.1f}ms {t_py / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
