"""Compiled vs numpy kernels on realistic inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Pupil search runs on eye patches of the size a 512 crop produces; the
z-buffer splat runs on a registration-sized footprint set and on a
turntable-sized point cloud.
"""

import argparse
import time

import numpy as np

from rgbdface import kernels
from rgbdface.landmarks import pupil_inputs


def eye_patch(w, h, rng):
    yy, xx = np.mgrid[:h, :w]
    cx, cy = w * rng.uniform(0.35, 0.65), h * rng.uniform(0.35, 0.65)
    patch = np.full((h, w), 200.0)
    patch[(xx - cx) ** 2 + (yy - cy) ** 2 < (0.2 * h) ** 2] = 30.0
    return np.clip(patch + rng.normal(0, 4, patch.shape), 0, 255).astype(np.uint8)


def splat_inputs(n, size, rng):
    x0 = rng.integers(0, size, n)
    y0 = rng.integers(0, size, n)
    w = rng.integers(1, 4, n)
    return x0, x0 + w, y0, y0 + w, rng.uniform(300, 555, n)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    cases = []
    for w, h in ((40, 24), (64, 40)):
        smooth, ux, uy, keep = pupil_inputs(eye_patch(w, h, rng))
        a = (ux, uy, keep, 255.0 - smooth)
        cases.append((f"pupil_objective {w}x{h}",
                      lambda impl, a=a: kernels.pupil_objective(*a, impl=impl)))
    for n, size in ((76800, 480), (262144, 512)):
        a = splat_inputs(n, size, rng)
        cases.append((f"zbuffer_rects n={n}",
                      lambda impl, a=a, size=size: kernels.zbuffer_rects(*a, size, size, impl=impl)))

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default {kernels.BACKEND})")
    print(f"{'case':32s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name, fn in cases:
        t = {b: best_of(lambda: fn(mod), args.repeat) for b, mod in backends.items()}
        row = f"{name:32s}" + "".join(f"{t[b] * 1e3:10.2f}ms" for b in backends)
        if len(backends) == 2:
            row += f"  {t['python'] / t['cython']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
