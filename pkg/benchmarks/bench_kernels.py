"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each case runs the same inputs through both backends, checks that the
outputs agree, and reports the best-of-N wall time per call.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from compolayout import kernels
from compolayout.collision import collision_loss_scene
from compolayout.layout_init import build_pose_grid, pose_features
from compolayout.raster import default_camera, render
from compolayout.synthetic import asymmetric_cloud, random_scene, two_sphere_scene


def best_time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng: np.random.Generator):
    cloud = asymmetric_cloud(rng, 20_000, splat_radius=0.02)
    cam = default_camera(20, 130, resolution=256)
    buf = render(cloud, cam)
    depth = np.ascontiguousarray(buf.depth)
    fg = np.ascontiguousarray(buf.silhouette, dtype=np.uint8)
    k = buf.focal / float(depth[buf.silhouette].mean())
    spheres = two_sphere_scene(rng, 4000, 0.5)
    small = random_scene(rng, 4, 200)
    shape = asymmetric_cloud(rng, 1500)
    grid = build_pose_grid(30, (-30, 60))
    return {
        "render 20k splats @256": lambda: render(cloud, cam).silhouette,
        "depth normals @256": lambda: kernels.depth_normals(depth, fg, k),
        "collision scene 2x4000": lambda: collision_loss_scene(spheres).grads,
        "collision scene 4x200": lambda: collision_loss_scene(small).grads,
        "pose search 48 poses": lambda: np.stack([f.values for f in pose_features(shape, grid)]),
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", default=None, help="also write results to this file")
    args = parser.parse_args(argv)

    try:
        kernels.use_backend("cython")
    except ImportError:
        print("compiled extension not built; only the numpy backend is available")
        return 1
    benches = cases(np.random.default_rng(args.seed))

    rows = []
    print(f"{'case':<28}{'cython ms':>12}{'python ms':>12}{'speedup':>10}  outputs")
    for name, fn in benches.items():
        timings, outputs = {}, {}
        for backend in ("cython", "python"):
            kernels.use_backend(backend)
            outputs[backend] = np.asarray(fn())
            timings[backend] = best_time(fn, args.repeat)
        agree = np.allclose(outputs["cython"], outputs["python"], rtol=1e-12, atol=1e-12, equal_nan=True)
        speedup = timings["python"] / timings["cython"]
        rows.append({"case": name, **{f"{b}_s": t for b, t in timings.items()}, "speedup": speedup, "agree": bool(agree)})
        print(
            f"{name:<28}{1e3 * timings['cython']:>12.2f}{1e3 * timings['python']:>12.2f}{speedup:>9.1f}x  "
            f"{'match' if agree else 'DIFFER'}"
        )
    kernels.use_backend("cython")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["agree"] for r in rows) else 2


if __name__ == "__main__":
    raise SystemExit(main())
