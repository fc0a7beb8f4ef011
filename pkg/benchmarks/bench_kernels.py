"""Compare the compiled and pure-Python BN+ELU / pooling kernels.

    python3 benchmarks/bench_kernels.py [--rows 80000] [--width 64] [--repeat 10]

Also times one full training step of the bag model under each backend.
"""

from __future__ import annotations

import argparse
import importlib
import os
import timeit

import numpy as np

from amil import _kernels_py


def _load_cython():
    try:
        return importlib.import_module("amil._ckernels")
    except ImportError:
        return None


def bench_kernels(mod, rows, width, repeat):
    rng = np.random.default_rng(0)
    z = rng.standard_normal((rows, width))
    g, b = np.ones(width), np.zeros(width)
    rm, rv = np.zeros(width), np.ones(width)
    a, xhat, _, var = mod.bn_elu_forward_train(z, g, b, 1e-3)
    da = rng.standard_normal(z.shape)
    cases = {
        "forward_train": lambda: mod.bn_elu_forward_train(z, g, b, 1e-3),
        "forward_eval": lambda: mod.bn_elu_forward_eval(z, g, b, rm, rv, 1e-3),
        "backward": lambda: mod.bn_elu_backward(da, a, xhat, g, var, 1e-3),
        "mean_pool": lambda: mod.bag_mean_pool(z, 250 if rows % 250 == 0 else 1),
    }
    return {k: min(timeit.repeat(f, number=1, repeat=repeat)) for k, f in cases.items()}


def bench_train_step(backend, rows, repeat):
    # the backend is fixed at import, so measure in a fresh interpreter
    code = (
        "import numpy as np, timeit\n"
        "from amil.bagnet import BagModel, loss_and_grad\n"
        f"x = np.random.default_rng(0).standard_normal(({rows} // 250, 250, 1))\n"
        "y = np.arange(x.shape[0]) % 2\n"
        "m = BagModel.create('binary', 1)\n"
        "r = np.random.default_rng(1)\n"
        f"print(min(timeit.repeat(lambda: loss_and_grad(m, x, y, rng=r), number=1, repeat={repeat})))\n"
    )
    import subprocess
    import sys

    env = dict(os.environ, AMIL_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=80_000)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=10)
    args = ap.parse_args()

    cy = _load_cython()
    py_t = bench_kernels(_kernels_py, args.rows, args.width, args.repeat)
    cy_t = bench_kernels(cy, args.rows, args.width, args.repeat) if cy else None
    print(f"{args.rows} x {args.width}, best of {args.repeat} (seconds)")
    print(f"{'kernel':<16}{'python':>10}{'cython':>10}{'speedup':>9}")
    for k, t in py_t.items():
        if cy_t:
            print(f"{k:<16}{t:>10.4f}{cy_t[k]:>10.4f}{t / cy_t[k]:>8.2f}x")
        else:
            print(f"{k:<16}{t:>10.4f}{'n/a':>10}")
    if cy:
        tp = bench_train_step("python", args.rows, args.repeat)
        tc = bench_train_step("cython", args.rows, args.repeat)
        print(f"{'train_step':<16}{tp:>10.4f}{tc:>10.4f}{tp / tc:>8.2f}x")


if __name__ == "__main__":
    main()
