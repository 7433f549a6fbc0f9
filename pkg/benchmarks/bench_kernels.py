"""Timing comparison of the compiled and pure-numpy evaluation kernels.

Run twice to compare both paths end to end:

    python3 benchmarks/bench_kernels.py
    MIKADOFLOW_NO_NUMBA=1 python3 benchmarks/bench_kernels.py

Within one process the script always times trig_eval_numpy alongside
whatever trig_eval resolved to at import, so a single run already shows
the speedup when numba is active.
"""

import time

import numpy as np

from mikadoflow import _kernels


def bench(fn, points, kvecs, cre, cim, repeats=3):
    fn(points[:16], kvecs, cre, cim)  # warm-up (JIT compile / cache touch)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(points, kvecs, cre, cim)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"numba enabled: {_kernels.NUMBA_ENABLED}")
    print(f"{'npts':>8s} {'modes':>6s} {'active (s)':>12s} {'numpy (s)':>12s} {'ratio':>7s}")
    for npts, nm in [(4096, 64), (32768, 64), (32768, 512), (262144, 128)]:
        points = rng.uniform(0.0, 1.0, size=(npts, 3))
        kvecs = rng.integers(-8, 9, size=(nm, 3)).astype(np.float64)
        cre = rng.normal(size=nm)
        cim = rng.normal(size=nm)
        t_active = bench(_kernels.trig_eval, points, kvecs, cre, cim)
        t_numpy = bench(_kernels.trig_eval_numpy, points, kvecs, cre, cim)
        print(f"{npts:8d} {nm:6d} {t_active:12.4f} {t_numpy:12.4f} "
              f"{t_numpy / t_active:7.2f}")


if __name__ == "__main__":
    main()
