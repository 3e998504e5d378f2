#!/usr/bin/env python3
"""Micro-benchmarks for the hot-path array kernels.

Times each compiled kernel against its pure-numpy fallback on inputs
shaped like the default experiment (subdomain meshes, interface point
sets, CSR operators), and checks that the two implementations agree
numerically. Speedups below 1.0 are possible for the smallest inputs,
where dispatch overhead dominates.

Run from the repository root:

    python3 benchmarks/benchmark_kernels.py
    CDRSCHWARZ_NUMBA=0 python3 benchmarks/benchmark_kernels.py   # fallback only
"""

import argparse
import time

import numpy as np
import scipy.sparse

from cdrschwarz import kernels

KERNELS = ("locate_points", "bilinear_gather", "scatter_coo",
           "load_scatter", "csr_matvec", "all_finite",
           "relative_sup_change")


def build_cases(rng):
    """Representative (name, args) pairs for every kernel."""
    nx = ny = 96
    hx, hy = 1.0 / nx, 1.0 / ny
    n_nodes = (nx + 1) * (ny + 1)

    n_pts = 20_000
    px = rng.uniform(0.0, 1.0, n_pts)
    py = rng.uniform(0.0, 1.0, n_pts)
    locate_args = (px, py, 0.0, 0.0, hx, hy, nx, ny, 1e-12)

    field = rng.standard_normal(n_nodes)
    ci, cj, xi, eta, _ = kernels.locate_points_numpy(*locate_args)

    cell = np.arange(nx * ny, dtype=np.int64)
    icell, jcell = cell % nx, cell // nx
    base = jcell * (nx + 1) + icell
    conn = np.stack([base, base + 1, base + nx + 1, base + nx + 2], axis=1)
    elem_m = rng.standard_normal((4, 4))
    elem_a = rng.standard_normal((4, 4))

    fq = rng.standard_normal((nx * ny, 4))
    phiw = rng.standard_normal((4, 4))

    matrix = scipy.sparse.random(
        4_000, 4_000, density=0.0025, format="csr", random_state=7)
    x = rng.standard_normal(matrix.shape[1])

    gamma_new = rng.standard_normal(256)
    gamma_prev = gamma_new + 1e-6 * rng.standard_normal(256)

    return {
        "locate_points": locate_args,
        "bilinear_gather": (field, ci, cj, xi, eta, nx),
        "scatter_coo": (conn, elem_m, elem_a),
        "load_scatter": (conn, fq, phiw, n_nodes),
        "csr_matvec": (matrix.data, matrix.indices, matrix.indptr, x),
        "all_finite": (rng.standard_normal(1_000_000),),
        "relative_sup_change": (gamma_new, gamma_prev),
    }


def max_difference(a, b):
    """Largest elementwise discrepancy between two kernel results."""
    if isinstance(a, tuple):
        return max(max_difference(u, v) for u, v in zip(a, b))
    a = np.asarray(a)
    b = np.asarray(b)
    if a.dtype.kind in "bi":
        return 0.0 if np.array_equal(a, b) else np.inf
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def best_seconds(fn, args, repeats):
    fn(*args)  # warm (and, for compiled kernels, JIT) outside the timing
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=100,
                        help="timing repetitions per kernel (best-of)")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for the synthetic inputs")
    args = parser.parse_args()

    cases = build_cases(np.random.default_rng(args.seed))
    print(f"kernel backend: {kernels.backend_name()}")

    if not kernels.NUMBA_ENABLED:
        print("compiled backend disabled (CDRSCHWARZ_NUMBA=0 or numba "
              "unavailable); timing the numpy fallbacks only\n")
        print(f"{'kernel':<22} {'numpy ms':>10}")
        for name in KERNELS:
            fallback = getattr(kernels, name + "_numpy")
            ms = best_seconds(fallback, cases[name], args.repeats) * 1e3
            print(f"{name:<22} {ms:>10.4f}")
        return

    kernels.warmup()
    print(f"{'kernel':<22} {'numpy ms':>10} {'numba ms':>10} "
          f"{'speedup':>8} {'max |diff|':>11}")
    for name in KERNELS:
        compiled = getattr(kernels, name)
        fallback = getattr(kernels, name + "_numpy")
        diff = max_difference(compiled(*cases[name]), fallback(*cases[name]))
        numpy_ms = best_seconds(fallback, cases[name], args.repeats) * 1e3
        numba_ms = best_seconds(compiled, cases[name], args.repeats) * 1e3
        print(f"{name:<22} {numpy_ms:>10.4f} {numba_ms:>10.4f} "
              f"{numpy_ms / numba_ms:>8.2f} {diff:>11.3e}")


if __name__ == "__main__":
    main()
