"""Time the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``; pass ``--quick`` for a short run.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from esinfer import _kernels_py

try:
    from esinfer import _kernels
except ImportError:  # extension not built
    _kernels = None


def _problem(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    y = X @ rng.normal(size=p) + rng.standard_normal(n)
    return X, y


def cases(quick: bool):
    sizes = [(200, 3), (2000, 3)] if quick else [(200, 3), (200, 8), (2000, 3), (2000, 8), (10000, 3)]
    for n, p in sizes:
        X, y = _problem(n, p)
        yield f"rq_fnb n={n} p={p}", lambda m, X=X, y=y: m.rq_fnb(X, y, 0.2)
    for n in ([100] if quick else [100, 400]):
        e = np.random.default_rng(1).standard_normal(n)
        t = np.linspace(-1.0, 1.0, n)
        yield f"kde_truncated_moments n={n}", lambda m, e=e, t=t: m.kde_truncated_moments(e, 0.3, t, -9.0, 512)
    X, y = _problem(2000, 3)
    tq = np.array([0.0, 0.5, -0.2])
    te = np.array([-5.0, 0.5, -0.2])
    yield "joint_loss_sum n=2000", lambda m: m.joint_loss_sum(y - 10.0, X, tq, te, 0.2, 1)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"{'kernel':<32}{'numpy ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name, fn in cases(args.quick):
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{name:<32}{t_py:>12.3f}{'n/a':>14}{'':>10}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<32}{t_py:>12.3f}{t_c:>14.3f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
