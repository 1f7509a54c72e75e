"""Compare the compiled and pure-Python im2col/col2im kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from recdiffseg import _pykernels

try:
    from recdiffseg import _ckernels
except ImportError:  # extension not built
    _ckernels = None

CASES = [  # (H, W, C, k, stride, pad)
    (64, 64, 8, 3, 1, 1),
    (32, 32, 16, 3, 1, 1),
    (64, 64, 16, 3, 2, 1),
    (16, 16, 32, 3, 1, 1),
]


def bench(mod, case, repeat):
    H, W, C, k, s, p = case
    x = np.random.default_rng(0).standard_normal((H, W, C)).astype(np.float32)
    cols = mod.im2col(x, k, k, s, p)
    t_fwd = min(timeit.repeat(lambda: mod.im2col(x, k, k, s, p), number=20, repeat=repeat)) / 20
    t_bwd = min(timeit.repeat(lambda: mod.col2im(cols, x.shape, k, k, s, p), number=20, repeat=repeat)) / 20
    return t_fwd, t_bwd


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'case (HxWxC k/s/p)':<24}" + "".join(f"{n + ' im2col':>16}{n + ' col2im':>16}" for n, _ in backends))
    for case in CASES:
        H, W, C, k, s, p = case
        row = f"{H}x{W}x{C} {k}/{s}/{p}".ljust(24)
        for _, mod in backends:
            f, b = bench(mod, case, args.repeat)
            row += f"{f * 1e3:>13.3f} ms{b * 1e3:>13.3f} ms"
        print(row)
    if _ckernels is None:
        print("compiled extension not available; only the fallback was timed")


if __name__ == "__main__":
    main()
