"""Timing comparison of the compiled and pure-NumPy compositing kernels.

Runs the full forward and backward rasterization over seeded random fields
with both backends and prints per-call timings plus the speedup ratio.

Usage: python3 benchmarks/bench_raster.py [--splats N] [--size PX] [--reps R]
"""

import argparse
import time

import numpy as np

from gsrefine.camera import CameraView
from gsrefine.field import SplatField
from gsrefine import raster


def random_field(rng, n):
    mu = rng.normal(0.0, 1.0, (n, 3)) + np.array([0.0, 0.0, 5.0])
    return SplatField(mu=mu,
                      log_scale=rng.normal(-1.5, 0.3, (n, 3)),
                      quat=rng.normal(0.0, 1.0, (n, 4)),
                      opacity_logit=rng.normal(0.5, 1.0, n),
                      color=rng.uniform(0.05, 0.95, (n, 3)),
                      background=rng.uniform(0.0, 1.0, 3))


def bench_backend(backend, field, cam, reps):
    saved = raster._kernels
    raster._kernels = raster.get_kernels(backend)
    try:
        out = raster.rasterize(field, cam)  # warm up
        g_color = np.ones_like(out.color)
        g_depth = np.ones_like(out.depth)
        t0 = time.perf_counter()
        for _ in range(reps):
            out = raster.rasterize(field, cam)
        t_fwd = (time.perf_counter() - t0) / reps
        t0 = time.perf_counter()
        for _ in range(reps):
            raster.rasterize_backward(field, cam, out, g_color, g_depth)
        t_bwd = (time.perf_counter() - t0) / reps
    finally:
        raster._kernels = saved
    return t_fwd, t_bwd


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--splats", type=int, default=2000)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    field = random_field(rng, args.splats)
    cam = CameraView(fx=0.9 * args.size, fy=0.9 * args.size,
                     cx=(args.size - 1) / 2, cy=(args.size - 1) / 2,
                     width=args.size, height=args.size,
                     rotation=np.eye(3), translation=np.zeros(3))

    print(f"splats={args.splats} image={args.size}x{args.size} reps={args.reps}")
    results = {}
    for backend in ("python", "cython"):
        try:
            results[backend] = bench_backend(backend, field, cam, args.reps)
        except ImportError:
            print(f"{backend:>7}: unavailable")
            continue
        fwd, bwd = results[backend]
        print(f"{backend:>7}: forward {fwd * 1e3:8.2f} ms   backward {bwd * 1e3:8.2f} ms")
    if len(results) == 2:
        pf, pb = results["python"]
        cf, cb = results["cython"]
        print(f"speedup: forward {pf / cf:5.1f}x   backward {pb / cb:5.1f}x")


if __name__ == "__main__":
    main()
