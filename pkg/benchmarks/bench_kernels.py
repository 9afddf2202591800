#!/usr/bin/env python3
"""Time the numba and numpy backends of the ray-cast and plane-fit kernels.

Usage: python benchmarks/bench_kernels.py [--size 128] [--repeat 5]

Both backends run on identical inputs; the script also reports the largest
difference between their outputs so a speedup never hides a mismatch.
"""
import argparse
import time

import numpy as np

from xmodal.annotate import backproject
from xmodal.kernels import planefit, raycast
from xmodal.scenegen import generate_scene, generate_trajectory
from xmodal.scenegen.render import pixel_grid, ray_directions
from xmodal.scenegen.scene import MAX_DEPTH


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def scene_rays(size, seed=0):
    scene = generate_scene(seed)
    traj = generate_trajectory(seed, scene, 2, (size, size))
    intr = traj.intrinsics_for((size, size))
    pose = traj.poses[0]
    xs, ys = pixel_grid(size, size)
    dirs, _ = ray_directions(intr, pose.rotation, xs, ys)
    return scene, pose, intr, dirs


def bench_raycast(size, repeat):
    scene, pose, _, dirs = scene_rays(size)
    prims = scene.prim_table()
    args = (pose.translation, dirs, prims, MAX_DEPTH)
    raycast.cast_numba(*args)  # compile outside the timing
    t_nb, (t1, i1, _) = best_of(lambda: raycast.cast_numba(*args), repeat)
    t_np, (t2, i2, _) = best_of(lambda: raycast.cast_numpy(*args), repeat)
    hit = i1 >= 0
    diff = float(np.max(np.abs(t1[hit] - t2[hit]))) if hit.any() else 0.0
    agree = float(np.mean(i1 == i2))
    return t_np, t_nb, f"index agreement {agree:.4f}, max |dt| {diff:.2e}"


def bench_planefit(size, repeat, window=3, ratio=0.05):
    scene, pose, intr, dirs = scene_rays(size)
    t, idx, _ = raycast.cast_numpy(pose.translation, dirs, scene.prim_table(), MAX_DEPTH)
    # rays have unit camera-space z, so t is already depth along the axis
    z = t.reshape(size, size)
    valid = (idx >= 0).reshape(size, size)
    depth = np.where(valid, z, 1.0)
    pts = backproject(depth, intr)
    args = (pts, depth, valid, window, ratio)
    planefit.fit_numba(*args)
    t_nb, (n1, ok1) = best_of(lambda: planefit.fit_numba(*args), repeat)
    t_np, (n2, ok2) = best_of(lambda: planefit.fit_numpy(*args), repeat)
    both = ok1 & ok2
    diff = float(np.max(np.abs(n1[both] - n2[both]))) if both.any() else 0.0
    return t_np, t_nb, f"ok agreement {np.mean(ok1 == ok2):.4f}, max |dn| {diff:.2e}"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=128, help="image side in pixels")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not raycast.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"{'kernel':<10} {'numpy s':>10} {'numba s':>10} {'speedup':>8}  check")
    for name, fn in (("raycast", bench_raycast), ("planefit", bench_planefit)):
        t_np, t_nb, note = fn(args.size, args.repeat)
        print(f"{name:<10} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>7.1f}x  {note}")


if __name__ == "__main__":
    main()
