"""Time the numba kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--sizes 4,6,10] [--repeat 5]

Prints one line per kernel and size with the best wall time of each backend
and the speedup.  Both backends are checked to agree before timing.
"""
import argparse
import timeit

import numpy as np

from gwformation.accel import numba_kernels, numpy_kernels


def _cases(N, rng):
    X = rng.normal(size=(N, 2)) * 3
    Y = rng.normal(size=(N, 2)) * 3
    Cx = numpy_kernels.pairwise_sq_dists(X)
    Cy = numpy_kernels.pairwise_sq_dists(Y)
    G = numpy_kernels.loss_tensor(Cx, Cy)
    p = rng.dirichlet(np.ones(N * N))
    W = np.outer(p, p)
    M = rng.normal(size=(N, N))
    r = np.full(N, 1.0 / N)
    perm = rng.permutation(N).astype(np.int64)
    return {
        "pairwise_sq_dists": lambda k: k.pairwise_sq_dists(X),
        "loss_tensor": lambda k: k.loss_tensor(Cx, Cy),
        "lifted_value_grad": lambda k: k.lifted_value_grad(X, Cy, W, True),
        "dykstra_project": lambda k: k.dykstra_project(M, r, r, 2000, 1e-12),
        "two_opt": lambda k: k.two_opt(G, perm.copy(), 50),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-9, atol=1e-10)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="4,6,10")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if numba_kernels is None:
        raise SystemExit("numba kernels unavailable (GWFORMATION_DISABLE_NUMBA set or numba missing)")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'N':>4}{'numpy s':>12}{'numba s':>12}{'speedup':>10}")
    for N in (int(s) for s in args.sizes.split(",")):
        for name, call in _cases(N, rng).items():
            ref, fast = call(numpy_kernels), call(numba_kernels)  # also compiles
            if not _same(ref, fast):
                raise SystemExit(f"{name} disagrees at N={N}")
            t_np = min(timeit.repeat(lambda: call(numpy_kernels), number=3, repeat=args.repeat)) / 3
            t_nb = min(timeit.repeat(lambda: call(numba_kernels), number=3, repeat=args.repeat)) / 3
            print(f"{name:<20}{N:>4}{t_np:>12.2e}{t_nb:>12.2e}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
