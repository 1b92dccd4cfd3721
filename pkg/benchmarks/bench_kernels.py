"""Compare the numba kernels with the numpy kernels.

    python benchmarks/bench_kernels.py            # kernel micro-benchmark
    python benchmarks/bench_kernels.py --e2e      # also a short experiment per backend

The end-to-end mode re-runs this interpreter with FEDOPT_NUMBA=1/0, since the
backend is fixed at import time.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from fedtoga import kernels
from fedtoga._jit import USE_NUMBA


def best_of(fn, repeats):
    fn()  # warm-up (triggers compilation for numba)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_table(repeats):
    g = np.random.default_rng(0)
    print(f"{'kernel':<28} {'batch':>6} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for widths, n in [((10, 16, 4), 50), ((10, 16, 4), 1600), ((32, 64, 64, 10), 50)]:
        w = np.array(widths, dtype=np.int64)
        X = g.standard_normal((n, widths[0]))
        y = g.integers(0, widths[-1], n)
        p = g.uniform(-0.3, 0.3, kernels.mlp_param_count(widths))
        t_np = best_of(lambda: kernels.mlp_loss_grad_np(p, X, y, w, True), repeats)
        t_lp = best_of(lambda: kernels.mlp_loss_grad_jit(p, X, y, w, True), repeats)
        print(f"{'mlp_loss_grad ' + str(widths):<28} {n:>6} {t_np * 1e6:>10.1f} {t_lp * 1e6:>10.1f} "
              f"{t_np / t_lp:>7.2f}x")
    X = g.standard_normal((50, 10))
    y = g.integers(0, 2, 50)
    wv = g.standard_normal(10)
    t_np = best_of(lambda: kernels.logistic_loss_grad_np(wv, X, y), repeats)
    t_lp = best_of(lambda: kernels.logistic_loss_grad_loops(wv, X, y), repeats)
    print(f"{'logistic_loss_grad':<28} {50:>6} {t_np * 1e6:>10.1f} {t_lp * 1e6:>10.1f} "
          f"{t_np / t_lp:>7.2f}x")


E2E = """
import time
from fedtoga.harness import ExperimentConfig, run_experiment
cfg = ExperimentConfig(algorithm="fedtoga", N=20, M=4, T=100, eval_every=10)
run_experiment(ExperimentConfig(T=1, N=2, M=1, n_samples=100))
t0 = time.perf_counter(); run_experiment(cfg); print(f"{time.perf_counter() - t0:.2f}")
"""


def e2e():
    for flag in ("1", "0"):
        env = dict(os.environ, FEDOPT_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True,
                             text=True, check=True).stdout.strip()
        print(f"fedtoga 100 rounds, FEDOPT_NUMBA={flag}: {out}s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--e2e", action="store_true")
    args = ap.parse_args()
    if not USE_NUMBA:
        print("note: numba disabled or missing; 'numba' column is interpreted Python")
    kernel_table(args.repeats)
    if args.e2e:
        e2e()


if __name__ == "__main__":
    main()
