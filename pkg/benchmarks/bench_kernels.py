"""Compiled vs pure-Python tree kernels.

Times ``grow_tree`` on a GB-sized problem for each backend, then a full
gradient-boosting fit with the classifier module switched between them, and
checks that both backends grow identical trees.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from faultpipe import _kernels_py, kernels
from faultpipe.classifiers import ClassifierSpec, fit

try:
    from faultpipe import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def _problem(n: int, p: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    y = (x[:, 0] + 0.5 * x[:, 1] ** 2 + 0.3 * rng.normal(size=n) > 0.5).astype(np.int64)
    order = np.argsort(x, axis=0, kind="stable").T.astype(np.int32)
    return x, y, order, rng.random(4096)


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--rows", type=int, default=192)
    ap.add_argument("--cols", type=int, default=48)
    args = ap.parse_args()

    x, y, order, u = _problem(args.rows, args.cols)
    target = y - y.mean()
    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    else:
        print("compiled extension not built; timing the fallback only")

    print(f"grow_tree, {args.rows} rows x {args.cols} features, 8 leaves")
    grow = {}
    for name, mod in backends.items():
        t = _best(lambda: mod.grow_tree(x, target, order, 1, 8, 0, 0, False, u), args.repeat)
        grow[name] = t
        print(f"  {name:<7} {1e3 * t:9.3f} ms")

    print("gradient boosting fit, 100 rounds")
    spec = ClassifierSpec("GB")
    fits, models = {}, {}
    saved = kernels.grow_tree, kernels.apply_tree
    try:
        for name, mod in backends.items():
            kernels.grow_tree, kernels.apply_tree = mod.grow_tree, mod.apply_tree
            fits[name] = _best(lambda: fit(spec, x, y, seed=0), max(1, args.repeat // 2))
            models[name] = fit(spec, x, y, seed=0)
            print(f"  {name:<7} {1e3 * fits[name]:9.1f} ms")
    finally:
        kernels.grow_tree, kernels.apply_tree = saved

    if len(backends) == 2:
        same = models["python"].to_dict() == models["cython"].to_dict()
        print(f"speed-up: grow_tree x{grow['python'] / grow['cython']:.1f}, GB fit x{fits['python'] / fits['cython']:.1f}")
        print(f"identical models: {same}")


if __name__ == "__main__":
    main()
