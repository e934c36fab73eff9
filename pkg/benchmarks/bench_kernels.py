"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from hwclfa import _kernels_py

try:
    from hwclfa import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    # desk-sized adapter activations: 65 tokens, bottleneck 16, kernel 3
    x = rng.standard_normal((65, 16))
    w = rng.standard_normal((16, 3))
    g = rng.standard_normal((65, 16))
    # a 240 px stroke of ~600 pen samples
    n = 600
    t = np.linspace(0, 1, n)
    xs = 20 + 200 * t
    ys = 120 + 80 * np.sin(6 * t)
    radii = np.full(n, 2.5)
    colors = rng.uniform(0, 1, (n, 3))
    return {
        "dwconv1d_forward": lambda k: k.dwconv1d_forward(x, w),
        "dwconv1d_backward": lambda k: k.dwconv1d_backward(x, w, g),
        "stamp_discs": lambda k: k.stamp_discs(np.zeros((240, 240, 3)), xs, ys, radii, colors),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("python", _kernels_py)] + ([("compiled", _kernels)] if _kernels else [])
    print(f"{'kernel':20s}" + "".join(f"{name:>14s}" for name, _ in backends) + "   speedup")
    for name, fn in cases(np.random.default_rng(0)).items():
        row = []
        for _, mod in backends:
            number = 200 if name.startswith("dw") else 20
            best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
            row.append(best)
        speed = f"{row[0] / row[1]:8.1f}x" if len(row) == 2 else "       -"
        print(f"{name:20s}" + "".join(f"{1e6 * s:12.1f}us" for s in row) + "  " + speed)
    if _kernels is None:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
