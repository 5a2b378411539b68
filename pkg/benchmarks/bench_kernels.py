"""Benchmark the numba kernels against the pure numpy fallback.

Run: python3 benchmarks/bench_kernels.py [--level 4] [--repeat 5]

Both implementations are called explicitly, so the environment flag that
selects the active backend has no effect here. Timings are best-of-``repeat``
after one warm-up call (which also triggers numba compilation).
"""

import argparse
import time

import numpy as np

from mlmc_elliptic import fem, kernels
from mlmc_elliptic.mesh import build_hierarchy
from mlmc_elliptic.random_field import CoefficientModel, CovarianceSpec, build_sampler, element_coefficients


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(level, batch):
    mesh = build_hierarchy(4, level)[level]
    cov = CovarianceSpec("gaussian", 1.0, 0.5)
    model = CoefficientModel("scalar", cov)
    sampler = build_sampler(mesh, cov, base_seed=0)
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((mesh.n_nodes, batch))
    g = sampler.factor @ Z[:, 0]
    A = element_coefficients(model, mesh, g)
    system = fem.assemble(mesh, A, 1.0)
    M = system.matrix
    cg_args = (M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data, system.rhs, np.ones(M.shape[0]), 1e-10, 100000)
    ip, ix = mesh.node_adjacency
    return mesh, {
        "cg": lambda f: f(*cg_args),
        "tril_matmat": lambda f: f(sampler.factor, Z),
        "element_stiffness": lambda f: f(mesh.areas, mesh.basis_gradients, A),
        "neighbor_average": lambda f: f(ip, ix, g, 4),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--level", type=int, default=4, help="mesh level with m0=4 (default 4, 4225 nodes)")
    ap.add_argument("--batch", type=int, default=32, help="fields per sampling batch")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not kernels.HAS_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    mesh, bench = cases(args.level, args.batch)
    print(f"level {args.level}: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles, batch {args.batch}")
    print(f"{'kernel':<20}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, call in bench.items():
        t_np = best_of(lambda: call(getattr(kernels, f"{name}_numpy")), args.repeat)
        t_nb = best_of(lambda: call(getattr(kernels, f"{name}_numba")), args.repeat)
        print(f"{name:<20}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>10.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
