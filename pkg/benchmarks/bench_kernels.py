"""Compare the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time per kernel for both backends and checks
that the two agree on every input.  Where the numpy version wins
(``mc_estimates``) the dispatcher uses it on both backends.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from amidlab import kernels


def best_time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng: np.random.Generator):
    n = 16
    terms = (rng.random(n), rng.random(n), rng.normal(size=n), rng.uniform(0.05, 1.0, n))
    yield "enumerate_expectation (n=16)", kernels.py_enumerate_expectation, "enumerate_expectation", terms

    n, trials = 20, 100_000
    terms = (rng.random(n), rng.random(n), rng.normal(size=n), rng.uniform(0.05, 1.0, n), rng.random((trials, n)))
    yield "mc_estimates (10^5 x 20)", kernels.py_mc_estimates, "mc_estimates", terms

    B, T, d = 64, 8, 16
    left, right = rng.normal(size=(B, T, d)), rng.normal(size=(B, T, d))
    lm = rng.random((B, T)) < 0.8
    rm = rng.random((B, T)) < 0.8
    yield "similarity_max (64 x 64, T=8, d=16)", kernels.py_similarity_max, "similarity_max", (left, right, lm, rm)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"compiled extension available: {kernels.BACKEND == 'compiled'}")
    print(f"{'kernel':<38} {'python [ms]':>12} {'compiled [ms]':>14} {'speedup':>8}")
    for label, py_fn, name, inputs in cases(rng):
        t_py = best_time(lambda: py_fn(*inputs), args.repeat)
        if kernels.BACKEND != "compiled":
            print(f"{label:<38} {t_py * 1e3:>12.2f} {'n/a':>14} {'n/a':>8}")
            continue
        c_fn = kernels.compiled_mc_estimates if name == "mc_estimates" else getattr(kernels, name)
        np.testing.assert_allclose(np.asarray(c_fn(*inputs)), np.asarray(py_fn(*inputs)), atol=1e-10)
        t_c = best_time(lambda: c_fn(*inputs), args.repeat)
        print(f"{label:<38} {t_py * 1e3:>12.2f} {t_c * 1e3:>14.2f} {t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
