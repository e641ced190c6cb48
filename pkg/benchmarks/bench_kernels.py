"""Compiled kernels against the pure-Python fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is timed on
both backends and the outputs are compared for equality.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mnklab import _pykernels
from mnklab.game import GameSpec

try:
    from mnklab import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def timed(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(spec: GameSpec, budget: int, n_playouts: int):
    empty = (0,) * spec.cells
    theta = np.array([0.5, 2.0, 0.5, 2.0, 1.0])
    arr = np.asarray(empty, dtype=np.int32)
    return {
        "features": lambda k: [k.features(empty, spec.lines, spec.k, spec.center_cells) for _ in range(2000)],
        "negamax d4": lambda k: k.negamax(empty, 4, theta, 1000.0, spec.lines, spec.through, spec.k,
                                          spec.center_cells, True),
        "playouts": lambda k: k.playouts(empty, spec.lines, spec.through, n_playouts, 7),
        "mcts": lambda k: k.mcts_uniform(arr, spec.lines, spec.through, budget, 3.0, 7),
    }


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--spec", default="3,3,3")
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--playouts", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    spec = GameSpec.parse(args.spec)
    if _ckernels is None:
        print("compiled extension not available; timing the fallback only")
    print(f"{'kernel':<12} {'python s':>10} {'cython s':>10} {'speedup':>8}  same")
    for name, fn in cases(spec, args.budget, args.playouts).items():
        tp, op = timed(lambda: fn(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:<12} {tp:>10.4f}")
            continue
        tc, oc = timed(lambda: fn(_ckernels), args.repeat)
        same = repr(op) == repr(oc) if not isinstance(op, tuple) or not hasattr(op[0], "tolist") else all(
            np.array_equal(a, b) for a, b in zip(op, oc))
        print(f"{name:<12} {tp:>10.4f} {tc:>10.4f} {tp / tc:>8.1f}  {same}")


if __name__ == "__main__":
    main()
