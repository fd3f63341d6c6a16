"""Benchmark the numba kernels against the pure-numpy fallbacks.

Times the per-frame hot path (blob deposition, quantization, accumulation,
peak extraction) at acquisition-frame dims. Run as::

    python benchmarks/bench_kernels.py [--frames 2000] [--axial 512] [--lateral 128]

The same numbers can be reproduced on the fallback path alone by setting
PULSESYNC_NO_NUMBA=1, which is how the selection flag is meant to be used
when numba is unavailable.
"""

import argparse
import time

import numpy as np

from pulsesync import kernels


def time_path(impls, frames, axial, lateral, repeats=3):
    deposit = impls["deposit_gaussian"]
    quantize = impls["quantize_int16"]
    accumulate = impls["accumulate"]
    peak = impls["window_peak_abs"]

    canvas = np.zeros((axial, lateral), dtype=np.float64)
    deposit(canvas, axial // 3, lateral // 3, 8000.0, 1.5, 1.5)  # warm-up / compile
    samples, _ = quantize(canvas)
    acc = np.zeros((axial, lateral), dtype=np.float64)
    accumulate(acc, samples)
    peak(acc, 0, min(7, axial), 0, min(7, lateral))

    best = float("inf")
    for _ in range(repeats):
        acc[:] = 0.0
        t0 = time.perf_counter()
        for i in range(frames):
            canvas[:] = 0.0
            deposit(canvas, axial // 3, lateral // 3, 8000.0 * (1 + 0.01 * (i % 7)), 1.5, 1.5)
            deposit(canvas, (2 * axial) // 3, (2 * lateral) // 3, 8000.0, 1.5, 1.5)
            samples, _ = quantize(canvas)
            accumulate(acc, samples)
            peak(acc, axial // 3 - 3, axial // 3 + 4, lateral // 3 - 3, lateral // 3 + 4)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--frames", type=int, default=2000)
    parser.add_argument("--axial", type=int, default=512)
    parser.add_argument("--lateral", type=int, default=128)
    args = parser.parse_args()

    rows = []
    t_np = time_path(kernels.NUMPY_IMPLS, args.frames, args.axial, args.lateral)
    rows.append(("numpy", t_np))
    if kernels.NUMBA_IMPLS is not None:
        t_nb = time_path(kernels.NUMBA_IMPLS, args.frames, args.axial, args.lateral)
        rows.append(("numba", t_nb))
    else:
        print("numba path unavailable (not installed or PULSESYNC_NO_NUMBA set)")

    print(f"\n{args.frames} frames of {args.axial}x{args.lateral}, best of 3:")
    print(f"{'path':<8}{'total [s]':>12}{'us/frame':>12}{'frames/s':>12}")
    for name, total in rows:
        print(f"{name:<8}{total:>12.3f}{1e6 * total / args.frames:>12.1f}{args.frames / total:>12.0f}")
    if len(rows) == 2:
        print(f"\nnumba speedup over numpy: {rows[0][1] / rows[1][1]:.2f}x")


if __name__ == "__main__":
    main()
