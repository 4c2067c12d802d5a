"""Time the compiled kernels against the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.
"""

import argparse
import math
import timeit

import numpy as np

from scalarmix import _pykernels

try:
    from scalarmix import _ckernels
except ImportError:
    _ckernels = None


def interp_case(n, rng):
    f = rng.standard_normal((n, n))
    xi, yi = rng.uniform(0, n, (2, n, n))
    return lambda impl: impl.interp_bicubic_periodic(f, xi, yi)


def simplex_case(m, rng):
    pts = rng.random((2, m, 2))
    a = rng.random(m) + 0.01
    b = rng.random(m) + 0.01
    b *= a.sum() / b.sum()
    d = np.abs(pts[0][:, None, :] - pts[1][None, :, :])
    d = np.minimum(d, 1 - d)
    C = np.log1p(np.hypot(d[..., 0], d[..., 1]) / 0.01)
    return lambda impl: impl.transport_simplex(a, b, C)


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    cases = [(f"bicubic interpolation n={n}", interp_case(n, rng)) for n in (128, 256, 512)]
    cases += [(f"network simplex {m}x{m}", simplex_case(m, rng)) for m in (64, 256)]
    print(f"{'kernel':34s} {'python [s]':>12s} {'compiled [s]':>13s} {'speedup':>8s}")
    for name, case in cases:
        tp = best_of(lambda: case(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:34s} {tp:12.4f} {'n/a':>13s} {'':>8s}")
            continue
        tc = best_of(lambda: case(_ckernels), args.repeat)
        print(f"{name:34s} {tp:12.4f} {tc:13.4f} {tp / tc if tc > 0 else math.inf:8.1f}x")


if __name__ == "__main__":
    main()
