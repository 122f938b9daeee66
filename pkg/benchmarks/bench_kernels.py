"""Time the LBA log-likelihood kernel under both backends.

    python benchmarks/bench_kernels.py [--particles 100] [--trials 300] [--repeat 20]

Reports nanoseconds per trial-particle evaluation and the largest absolute
difference between the two backends on the same inputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from hlba import kernels
from hlba.model import ModelDesign, reference_group_params, sample_alpha_prior
from hlba.simulate import ExperimentDesign, simulate_dataset


def bench(backend: str, args, alpha, rt, choice, thr, s):
    kernels.set_backend(backend)
    out = kernels.loglik_particles(alpha, rt, choice, thr, 3, s, -np.inf)  # compile / warm up
    best = np.inf
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        kernels.loglik_particles(alpha, rt, choice, thr, 3, s, -np.inf)
        best = min(best, time.perf_counter() - t0)
    return out, best * 1e9 / (alpha.shape[0] * len(rt))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--particles", type=int, default=100)
    ap.add_argument("--trials", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    design = ModelDesign()
    group = reference_group_params()
    data, _ = simulate_dataset(ExperimentDesign(1, args.trials // 3, design, group), seed=1)
    rt, choice = data.rt, data.choice
    thr = np.asarray(design.threshold_map)[data.condition]
    alpha = sample_alpha_prior(group, np.random.default_rng(0), args.particles)
    s = design.s_array
    results = {b: bench(b, args, alpha, rt, choice, thr, s) for b in ("numba", "numpy")}
    for b, (_, ns) in results.items():
        print(f"{b:6s} {ns:8.1f} ns per trial-particle")
    a, b = results["numba"][0], results["numpy"][0]
    fin = np.isfinite(a) & np.isfinite(b)
    print(f"speed-up {results['numpy'][1] / results['numba'][1]:.1f}x; "
          f"max |difference| {np.max(np.abs(a[fin] - b[fin])):.2e}; "
          f"same -inf pattern: {bool(np.array_equal(np.isfinite(a), np.isfinite(b)))}")


if __name__ == "__main__":
    main()
