"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the best-of-N time for each backend and the
speedup. Outputs are also checked for exact equality.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from skullrec.kernels import backends
from skullrec.voxel_ops import phantom


def _cases(rng):
    xp = rng.standard_normal((2, 8, 34, 34, 34)).astype(np.float32)
    cols = rng.standard_normal((2, 8 * 27, 16 ** 3)).astype(np.float32)
    mask = (rng.random((64, 64, 64)) < 0.3).astype(np.uint8)
    shell = phantom(0, (64, 64, 64)).data.astype(np.float32)
    ang = np.radians(7.0)
    a = np.array([[np.cos(ang), -np.sin(ang), 0.0], [np.sin(ang), np.cos(ang), 0.0], [0.0, 0.0, 1.0]]) * 1.03
    b = np.array([1.3, -0.7, 0.4])
    return {
        "im2col3d  (2x8x34^3, k3 s2)": lambda m: m.im2col3d(xp, 3, 2, 16, 16, 16),
        "col2im3d  (2x216x16^3 -> 34^3)": lambda m: m.col2im3d(cols, 8, 34, 34, 34, 3, 2, 16, 16, 16),
        "label26   (64^3, 30% fill)": lambda m: m.label26(mask),
        "resample  nearest 64^3": lambda m: m.resample_affine(shell, a, b, 64, 64, 64, 0),
        "resample  trilinear 64^3": lambda m: m.resample_affine(shell, a, b, 64, 64, 64, 1),
    }


def _best(fn, repeat: int) -> tuple[float, object]:
    out, best = None, float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    found = backends()
    if "cython" not in found:
        print("compiled extension not built; only the numpy fallback is available")
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':34s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}  equal")
    for name, run in cases.items():
        t_py, out_py = _best(lambda: run(found["python"]), args.repeat)
        if "cython" in found:
            t_cy, out_cy = _best(lambda: run(found["cython"]), args.repeat)
            print(f"{name:34s} {1e3 * t_py:10.2f} {1e3 * t_cy:10.2f} {t_py / t_cy:8.1f}x  {_same(out_py, out_cy)}")
        else:
            print(f"{name:34s} {1e3 * t_py:10.2f} {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
