"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Both variants live side by side in ``odsd._kernels``; the env flag only
picks which one the public API uses.  With ``ODSD_DISABLE_JIT=1`` the
"jit" column runs the plain-Python bodies, which is slow but still works.
"""
import argparse
import time

import numpy as np

from odsd import _kernels as K
from odsd._jit import JIT_ENABLED


def best_of(fn, repeat):
    fn()  # warm-up (triggers compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    for n in (16, 64, 128):
        A = rng.standard_normal((n, n))
        A = A @ A.T
        yield f"eigh n={n} (jacobi)", lambda A=A: K.jacobi_eigh(A), lambda A=A: K._numpy_eigh(A)
    for n, k in ((500, 5), (4000, 5)):
        X = rng.standard_normal((n, 4))
        C0 = X[rng.choice(n, k, replace=False)].copy()
        yield f"lloyd n={n} k={k}", lambda X=X, C0=C0: K._lloyd_jit(X, C0.copy()), \
            lambda X=X, C0=C0: K._lloyd_numpy(X, C0.copy())
        labels = K._lloyd_numpy(X, C0.copy())[1]
        yield f"hartigan n={n} k={k}", lambda X=X, L=labels: K._hartigan_jit(X, L.copy(), 100), \
            lambda X=X, L=labels: K._hartigan_numpy(X, L.copy(), 100)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba enabled: {JIT_ENABLED}")
    print(f"{'kernel':24s} {'jit ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fast, ref in cases(rng):
        tj = best_of(fast, args.repeat)
        tn = best_of(ref, args.repeat)
        print(f"{name:24s} {1e3 * tj:10.3f} {1e3 * tn:10.3f} {tn / tj:8.1f}x")


if __name__ == "__main__":
    main()
