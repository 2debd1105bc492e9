"""Compare the compiled kernels with the NumPy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from minibit import kernels


def cases(rng):
    x = rng.standard_normal((32, 16, 32, 32)).astype(np.float32)
    xs = rng.standard_normal((32, 64, 8, 8)).astype(np.float32)
    pooled_grad = rng.standard_normal((32, 16, 16, 16)).astype(np.float32)
    return {
        "pcg32_fill 1M": lambda k: k.pcg32_fill(0x853C49E6748FEA9B, 109, 1_000_000),
        "im2col 32x16x32x32 k3": lambda k: k.im2col(x, 3, 3, 1, 1, 1, 1),
        "col2im 32x16x32x32 k3": (lambda k, c=kernels.python_backend.im2col(x, 3, 3, 1, 1, 1, 1):
                                  k.col2im(c, x.shape, 3, 3, 1, 1, 1, 1)),
        "im2col 32x64x8x8 k3 s2": lambda k: k.im2col(xs, 3, 3, 2, 2, 1, 1),
        "maxpool fwd 3/2/1": lambda k: k.maxpool_forward(x, 3, 3, 2, 2, 1, 1),
        "maxpool bwd 3/2/1": (lambda k, a=kernels.python_backend.maxpool_forward(x, 3, 3, 2, 2, 1, 1)[1]:
                              k.maxpool_backward(pooled_grad, a, x.shape)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the NumPy backend is available")
    names = list(backends)
    print(f"{'kernel':<26}" + "".join(f"{n + ' ms':>12}" for n in names) + f"{'speedup':>10}")
    for label, fn in cases(np.random.default_rng(0)).items():
        ms = []
        for n in names:
            t = timeit.Timer(lambda: fn(backends[n]))
            ms.append(1e3 * min(t.repeat(args.repeat, 1)))
        speed = f"{ms[0] / ms[1]:>9.1f}x" if len(ms) == 2 else ""
        print(f"{label:<26}" + "".join(f"{v:>12.2f}" for v in ms) + speed)


if __name__ == "__main__":
    main()
