#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the two hot paths (window-pair symmetrized contractions and the RK4
corpus integrator) under both backends and prints a comparison table.

Usage:
    python scripts/benchmark_backends.py [--windows N] [--grid G] [--modes D]
                                         [--repeats R]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from koopgp import _engine, backend
from koopgp.dynamics import make_corpus, predator_prey_system
from koopgp.spectral import SpectralPrior, sample_spectrum
from koopgp.kernels import KernelConfig


def time_call(fn, repeats):
    fn()  # warmup / JIT
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_psi(windows, grid_points, modes, repeats):
    rng = np.random.default_rng(0)
    grid = np.linspace(-0.97, 0.0, grid_points)
    spec = sample_spectrum(SpectralPrior(1, 0, 15, 0), modes, seed=0)
    cfg = KernelConfig("kesd", np.array([0.5, 0.7]), 1.0, 1.0, grid, spec)
    state = _engine.build_state(cfg)
    x = rng.normal(0, 1, (windows, grid_points, 2))
    pack = _engine.PackedInputs(grid, x, np.arange(windows), np.zeros(windows), None)

    out = {}
    for name in ("numpy", "numba"):
        try:
            backend.set_backend(name)
        except RuntimeError:
            out[name] = None
            continue
        out[name] = time_call(lambda: _engine.psi_triple(state, pack, pack), repeats)
    backend.set_backend("auto")
    return out


def bench_rk4(n_traj, repeats):
    system = predator_prey_system()
    out = {}
    for name in ("numpy", "numba"):
        try:
            backend.set_backend(name)
        except RuntimeError:
            out[name] = None
            continue
        out[name] = time_call(
            lambda: make_corpus(system, n_traj, [[0, 2], [0, 1]], 3.0, 64, seed=1),
            repeats,
        )
    backend.set_backend("auto")
    return out


def report(label, result):
    np_t, nb_t = result["numpy"], result["numba"]
    if nb_t is None:
        print(f"{label:<36} numpy {np_t * 1e3:9.1f} ms   numba unavailable")
        return
    print(
        f"{label:<36} numpy {np_t * 1e3:9.1f} ms   numba {nb_t * 1e3:9.1f} ms   "
        f"speedup x{np_t / nb_t:5.2f}"
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--windows", type=int, default=64)
    parser.add_argument("--grid", type=int, default=32)
    parser.add_argument("--modes", type=int, default=64)
    parser.add_argument("--trajectories", type=int, default=256)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    print(f"psi contractions: P={args.windows} G={args.grid} D={args.modes}")
    report("window-pair symmetrized features", bench_psi(args.windows, args.grid, args.modes, args.repeats))
    print(f"rk4 corpus: {args.trajectories} trajectories x 64 steps (dt=3)")
    report("fixed-step RK4 integration", bench_rk4(args.trajectories, args.repeats))


if __name__ == "__main__":
    main()
