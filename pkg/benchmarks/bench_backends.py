"""Time the compiled kernels against their numpy twins.

Run with ``python benchmarks/bench_backends.py``; prints one line per
kernel with the best-of-``repeat`` time for each backend, the speedup
and the largest absolute difference between the two outputs.
"""
import argparse
import timeit

import numpy as np

from dkfkit import _pycore

try:
    from dkfkit import _core
except ImportError:  # extension not built
    _core = None


def _cases(rng, T, d, N, m):
    A = 0.9 * np.eye(d)
    G = np.eye(d) - A @ A.T
    B = rng.standard_normal((T, d, d))
    J = np.einsum("tij,tkj->tik", B, B) + np.eye(d)
    h = rng.standard_normal((T, d))
    w = rng.random(N)
    w /= w.sum()
    X = rng.standard_normal((m, 5))
    Y = rng.standard_normal((m, 5))
    return {
        "info_scan": lambda mod: mod.info_scan(J, h, A, G, np.zeros(d), np.eye(d)),
        "systematic_resample": lambda mod: mod.systematic_resample(w, 0.37),
        "kernel_matrix[rbf]": lambda mod: mod.kernel_matrix(X, Y, _pycore.RBF, 1.0, 2.0),
        "kernel_matrix[mk]": lambda mod: mod.kernel_matrix(X, Y, _pycore.MK, 1.0, 2.0),
    }


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(o) for o in out]).astype(float)
    return np.ravel(out).astype(float)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--T", type=int, default=2000)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--N", type=int, default=100000)
    p.add_argument("--m", type=int, default=400)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if _core is None:
        print("compiled backend not built; nothing to compare")
        return 1
    cases = _cases(np.random.default_rng(0), args.T, args.d, args.N, args.m)
    print(f"{'kernel':<22}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}{'max |diff|':>12}")
    for name, fn in cases.items():
        t_py = min(timeit.repeat(lambda: fn(_pycore), number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(lambda: fn(_core), number=1, repeat=args.repeat))
        diff = np.max(np.abs(_flat(fn(_pycore)) - _flat(fn(_core))))
        print(f"{name:<22}{t_py:>12.5f}{t_cy:>12.5f}{t_py / t_cy:>10.1f}{diff:>12.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
