"""Compare the compiled filtering kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--size S]

Times the raw separable filter and the operations built on it (cataract
simulation, HFC decomposition, SSIM) under each backend and checks that
both produce the same numbers.
"""

import argparse
import timeit

import numpy as np

from arcnet import filters
from arcnet.degradation import sample_params, simulate_cataract
from arcnet.evaluation import ssim
from arcnet.frequency import decompose
from arcnet.toydata import toy_fundus


def cases(size):
    img = toy_fundus(size, seed=0)
    other = toy_fundus(size, seed=1)
    params = sample_params(size, size, 3)
    k26 = filters.gaussian_kernel_1d(26, 9.0)
    k5 = filters.gaussian_kernel_1d(5, 1.5)
    return {
        "filter r=26 (same)": lambda: filters.separable_filter(img.pixels, k26),
        "filter r=5 (valid)": lambda: filters.separable_filter(img.pixels, k5, valid=True),
        "simulate_cataract": lambda: simulate_cataract(img, params).pixels,
        "decompose r=26": lambda: decompose(img).hfc,
        "ssim": lambda: ssim(img, other),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timed calls per case")
    ap.add_argument("--size", type=int, default=256, help="image side length")
    args = ap.parse_args(argv)

    try:
        filters.set_backend("compiled")
    except ImportError:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
        return 1
    results = {}
    for backend in ("compiled", "python"):
        filters.set_backend(backend)
        for name, fn in cases(args.size).items():
            out = fn()
            t = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            results.setdefault(name, {})[backend] = (t, out)
    filters.set_backend("compiled")

    print(f"{'case':<22}{'compiled ms':>13}{'python ms':>12}{'speedup':>9}{'max |diff|':>12}")
    for name, r in results.items():
        (tc, oc), (tp, op) = r["compiled"], r["python"]
        diff = float(np.max(np.abs(np.asarray(oc) - np.asarray(op))))
        print(f"{name:<22}{tc * 1e3:>13.2f}{tp * 1e3:>12.2f}{tp / tc:>9.2f}{diff:>12.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
