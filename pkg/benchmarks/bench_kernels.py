"""Time the coefficient kernel: compiled extension vs numpy fallback.

    python3 benchmarks/bench_kernels.py [--steps 4096 16384 65536] [--order 3] [--repeat 3]

Each case builds the per-step weight table for a uniform-lambda VP-cosine grid
with a piecewise tau, the same call a long reference run makes.
"""
import argparse
import time

import numpy as np

from sasolver import kernels
from sasolver.coefficients import DEFAULT_RULE
from sasolver.schedules import NoiseSchedule, make_time_grid
from sasolver.stochasticity import TauSchedule, step_segments


def table_args(steps: int, order: int):
    s = NoiseSchedule.vp_cosine()
    grid = make_time_grid(s, "uniform-lambda", steps)
    cuts = np.linspace(s.t_eps, s.T, 5)
    ts = TauSchedule.piecewise([(cuts[k], cuts[k + 1], v) for k, v in enumerate([0.0, 1.0, 0.5, 1.5])])
    lams = grid.lambdas(s)
    nodes = np.zeros((steps, order))
    counts = np.empty(steps, dtype=np.int64)
    lo_all, hi_all, t2_all, ptr = [], [], [], [0]
    for i in range(steps):
        k = min(i + 1, order)
        nodes[i, :k] = lams[i - np.arange(k)]
        counts[i] = k
        lo, hi, t2 = step_segments(ts, s, lams[i], lams[i + 1])
        lo_all.append(lo)
        hi_all.append(hi)
        t2_all.append(t2)
        ptr.append(ptr[-1] + lo.size)
    return (lams[:-1], lams[1:], s.alpha(grid.times[1:]), nodes, counts, ptr, np.concatenate(lo_all),
            np.concatenate(hi_all), np.concatenate(t2_all), DEFAULT_RULE.nodes, DEFAULT_RULE.weights)


def best_time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, nargs="+", default=[1024, 4096, 16384, 65536])
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()

    have_ext = kernels.BACKEND == "cython"
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'steps':>8} {'python [s]':>12} {'cython [s]':>12} {'speedup':>8} {'max |diff|':>11}")
    for steps in args.steps:
        a = table_args(steps, args.order)
        t_py = best_time(lambda: kernels.weights_table(*a, backend="python"), args.repeat)
        if not have_ext:
            print(f"{steps:>8} {t_py:>12.4f} {'-':>12} {'-':>8} {'-':>11}")
            continue
        t_cy = best_time(lambda: kernels.weights_table(*a, backend="cython"), args.repeat)
        diff = np.max(np.abs(kernels.weights_table(*a, backend="python") - kernels.weights_table(*a, backend="cython")))
        print(f"{steps:>8} {t_py:>12.4f} {t_cy:>12.4f} {t_py / t_cy:>8.1f} {diff:>11.1e}")


if __name__ == "__main__":
    main()
