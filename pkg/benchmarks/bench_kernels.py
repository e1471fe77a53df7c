"""Time the numba kernels against the numpy fallback.

Run ``python3 benchmarks/bench_kernels.py``.  Both backends are built in the
same process, so ``GECAL_DISABLE_NUMBA`` must be unset for the numba column.
Each kernel is checked for agreement before it is timed.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gecal import _kernels as K
from gecal.entropy import make_entropy


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(n, rng):
    ent = make_entropy("ce")
    Z = np.column_stack([np.ones(n), rng.normal(2, 1, n), rng.uniform(0, 4, n), -rng.uniform(0.05, 1, n)])
    lam = np.array([0.0, 0.0, 0.0, 1.0])
    target = Z.sum(axis=0)
    dual = (ent.kind.code, ent.kernel_params, Z, np.zeros(n), np.ones(n), lam, target)
    pi = rng.uniform(0.02, 0.7, n)
    e = rng.normal(size=n)
    pij = np.outer(pi, pi)
    np.fill_diagonal(pij, pi)
    m = min(n, 2000)
    xs = rng.normal(size=(m, 2))
    xq = rng.normal(size=(4 * m, 2))
    nw = (xq, xs, rng.uniform(1, 10, m), rng.normal(size=m), np.array([0.3, 0.3]))
    return {
        "dual_derivs": dual,
        "pair_variance": (pi, e),
        "pair_variance_joint": (pij, pi, e),
        "nw_alpha": nw,
    }


def _close(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=1e-9, atol=1e-12) for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1000,4000", help="comma-separated sample sizes")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if K.NUMBA is None:
        print("numba backend unavailable (not installed or disabled); timing numpy only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'n':>7}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for n in (int(s) for s in args.sizes.split(",")):
        for name, call_args in cases(n, rng).items():
            t_np = best_of(lambda: K.NUMPY[name](*call_args), args.repeat)
            if K.NUMBA is None:
                print(f"{name:<22}{n:>7}{1e3 * t_np:>12.3f}{'-':>12}{'-':>10}")
                continue
            fast = K.NUMBA[name]
            ref = K.NUMPY[name](*call_args)
            got = fast(*call_args)  # also triggers compilation
            if not _close(ref, got):
                raise SystemExit(f"{name}: backends disagree at n={n}")
            t_nb = best_of(lambda: fast(*call_args), args.repeat)
            print(f"{name:<22}{n:>7}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
