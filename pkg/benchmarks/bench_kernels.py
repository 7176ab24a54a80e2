"""Timing comparison of the compiled and numpy kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Exercises the loss kernels at training-like shapes, the bilinear
upsampler at dissection-like shapes, and the overlap counter at
IoU-accumulation shapes.
"""

import argparse
import time

import numpy as np

from ibex.kernels import available_backends, get_backend


def timeit(fn, repeats):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = []
    for b, n in [(1024, 16), (2048, 128), (2048, 512)]:
        y = rng.uniform(1e-4, 1 - 1e-4, size=(b, n))
        nu = np.full(n, 0.7 / n)
        cases.append((f"sparsity      [{b}x{n}]", "sparsity_loss_grad", (y,)))
        cases.append((f"max_activation[{b}x{n}]", "max_activation_loss_grad", (y,)))
        cases.append((f"inactive      [{b}x{n}]", "inactive_loss_grad", (y, nu, 2.5)))
    src = rng.uniform(size=(14, 14))
    cases.append(("upsample 14->224", "upsample_bilinear", (src, 224, 224)))
    maps = (rng.uniform(size=(512, 224 * 224)) > 0.995).astype(np.uint8)
    masks = (rng.uniform(size=(64, 224 * 224)) > 0.9).astype(np.uint8)
    cases.append(("overlap 512x64 @50k px", "overlap_counts", (maps, masks)))

    backends = available_backends()
    print(f"backends: {', '.join(backends)} (best of {args.repeats})")
    header = f"{'kernel':28s}" + "".join(f"{b:>12s}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    for label, fname, fargs in cases:
        times = []
        for backend in backends:
            fn = getattr(get_backend(backend), fname)
            times.append(timeit(lambda: fn(*fargs), args.repeats))
        row = f"{label:28s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[1] / times[0]:9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
