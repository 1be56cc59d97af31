"""Compare the compiled and pure-Python B-spline kernels.

Run from the repository root after building the extension:

    python benchmarks/bench_kernels.py [--points 800 1000 100000] [--repeat 20]

Reports the best-of-``repeat`` wall time of ``basis`` and ``basis_and_deriv``
for each batch size, the speed ratio, and the largest disagreement between
the two backends.  The KAN forward pass evaluates 16 x 50 = 800 points per
call, which is the first default size.  Finally a short end-to-end training
run is timed in subprocesses with and without ``LESA_PURE_PYTHON=1``.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from lesa._kernels import _pybspline
from lesa.spline_kan import SplineGrid

try:
    from lesa._kernels import _cbspline
except ImportError:
    _cbspline = None

TRAIN_SNIPPET = """
import time
from lesa import SynthBackbone, SynthParams, Schedule, integrate_full, make_predictor, TrainConfig, BACKEND
from lesa.train import train_gt_guided
data = [integrate_full(SynthBackbone(SynthParams(dim=16)), Schedule(50), seed=0)]
sp = make_predictor(50, 16)
t0 = time.perf_counter()
train_gt_guided(sp, data, TrainConfig(lr=1e-3, epochs_gt={epochs}))
print(BACKEND, time.perf_counter() - t0)
"""


def best_time(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_points(n: int, repeat: int, grid: SplineGrid) -> None:
    z = np.random.default_rng(n).uniform(grid.lo, grid.hi, n)
    knots, k = grid.knots, grid.order
    for name in ("basis", "basis_and_deriv"):
        py = getattr(_pybspline, name)
        t_py = best_time(lambda: py(knots, k, z), repeat)
        if _cbspline is None:
            print(f"{name:16s} n={n:>7d}  python {t_py * 1e3:9.3f} ms  (compiled backend not built)")
            continue
        cy = getattr(_cbspline, name)
        t_cy = best_time(lambda: cy(knots, k, z), repeat)
        a, b = py(knots, k, z), cy(knots, k, z)
        if name == "basis":
            a, b = (a,), (b,)
        diff = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
        print(f"{name:16s} n={n:>7d}  python {t_py * 1e3:9.3f} ms  cython {t_cy * 1e3:9.3f} ms"
              f"  ratio {t_py / t_cy:7.1f}x  max|diff| {diff:.1e}")


def bench_training(epochs: int) -> None:
    for pure in ("0", "1"):
        env = dict(os.environ, LESA_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET.format(epochs=epochs)],
                             env=env, capture_output=True, text=True, check=True).stdout.split()
        print(f"train {epochs} GT steps  backend={out[0]:7s} {float(out[1]):7.2f} s")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, nargs="+", default=[800, 10_000, 100_000])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--train-epochs", type=int, default=200)
    args = ap.parse_args()
    grid = SplineGrid()
    for n in args.points:
        bench_points(n, args.repeat, grid)
    if args.train_epochs > 0:
        bench_training(args.train_epochs)


if __name__ == "__main__":
    main()
