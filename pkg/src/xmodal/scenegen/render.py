"""Ray-cast ground truth: depth, normals, labels, RGB, forward flow and
occlusion. Pixel (i, j) has its centre at (j + 0.5, i + 0.5)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..kernels import cast_rays
from .scene import _ALBEDO, MAX_DEPTH, PALETTE, PATH, SKY

SKY_DEPTH = 1e9
UNKNOWN = 1e10  # flow component value for points behind the next camera
OCCLUSION_TOL = 1e-6  # relative; visible only if the re-cast ray hits the same point
NEAR_PLANE = 0.1  # m; closer points in the next frame get unknown flow


@dataclass
class FrameGT:
    rgb: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) metres along +z; SKY_DEPTH on sky
    normal: np.ndarray  # (H, W, 3) camera space, unit on surfaces, 0 on sky
    label: np.ndarray  # (H, W) uint8
    flow: np.ndarray | None  # (H, W, 2) pixels, t -> t+1
    occlusion: np.ndarray | None  # (H, W) uint8, 255 = not visible in t+1
    points: np.ndarray  # (H, W, 3) world hit points, NaN on sky
    prim_id: np.ndarray  # (H, W) primitive index, -1 on sky

    @property
    def surface(self):
        return self.prim_id >= 0


def pixel_grid(width, height):
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return xs + 0.5, ys + 0.5


def ray_directions(intr, R, xs, ys):
    """World directions whose camera-space z component is 1, so the hit
    parameter equals depth along the optical axis."""
    cam = np.stack([(xs - intr.cx) / intr.f, (ys - intr.cy) / intr.f, np.ones_like(xs)], axis=-1)
    return cam.reshape(-1, 3) @ np.asarray(R).T, cam


def project(intr, pose, X):
    """World points (..., 3) -> pixel coordinates (..., 2) and depth (...)."""
    Xc = (np.asarray(X) - pose.translation) @ pose.rotation
    z = Xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = intr.f * Xc[..., 0] / z + intr.cx
        y = intr.f * Xc[..., 1] / z + intr.cy
    return np.stack([x, y], axis=-1), z


def cast_pixels(scene, intr, pose, xs, ys):
    """Cast rays through continuous pixel positions. Returns depth (inf on
    miss), primitive index and world normal, shaped like ``xs``."""
    dirs, _ = ray_directions(intr, pose.rotation, xs, ys)
    t, idx, n = cast_rays(pose.translation, dirs, scene.prim_table(), MAX_DEPTH)
    return t.reshape(xs.shape), idx.reshape(xs.shape), n.reshape(xs.shape + (3,))


def _geometry(scene, intr, pose, width, height):
    xs, ys = pixel_grid(width, height)
    dirs, cam = ray_directions(intr, pose.rotation, xs, ys)
    t, idx, n_world = cast_rays(pose.translation, dirs, scene.prim_table(), MAX_DEPTH)
    t = t.reshape(height, width)
    idx = idx.reshape(height, width)
    hit = idx >= 0
    dirs = dirs.reshape(height, width, 3)
    n_world = n_world.reshape(height, width, 3)
    # face the camera
    flip = np.einsum("hwc,hwc->hw", n_world, dirs) > 0
    n_world[flip] *= -1
    n_world[~hit] = 0.0
    n_cam = n_world @ pose.rotation
    points = np.where(hit[..., None], pose.translation + np.where(hit, t, 0)[..., None] * dirs, np.nan)
    label = np.full((height, width), SKY, dtype=np.int64)
    classes = scene.class_table()
    label[hit] = classes[idx[hit]]
    ground = hit & (np.array([p.shape == "plane" for p in scene.primitives])[np.maximum(idx, 0)])
    if ground.any():
        label[ground] = scene.ground_label(points[ground, 0], points[ground, 1])
    depth = np.where(hit, t, SKY_DEPTH)
    return dict(xs=xs, ys=ys, dirs=dirs, hit=hit, idx=idx, depth=depth, n_world=n_world,
                n_cam=n_cam, points=points, label=label)


def shade(scene, geo):
    """Lambertian shading: albedo * (ambient + sun * max(0, <n, -sun_dir>))."""
    light = scene.lighting
    hit, idx, label, points = geo["hit"], geo["idx"], geo["label"], geo["points"]
    albedo = np.zeros(hit.shape + (3,))
    table = scene.albedo_table()
    albedo[hit] = table[idx[hit]]
    # ground albedo depends on the path layout
    on_path = hit & (label == PATH)
    albedo[on_path] = _ALBEDO[PATH]
    # mild procedural texture so surfaces are not flat colour
    px = np.nan_to_num(points[..., 0])
    py = np.nan_to_num(points[..., 1])
    pz = np.nan_to_num(points[..., 2])
    tex = 0.9 + 0.1 * np.sin(3.1 * px + 1.7 * pz) * np.sin(2.3 * py - 1.3 * pz)
    albedo *= tex[..., None]
    cosine = np.maximum(0.0, geo["n_world"] @ (-np.asarray(light.sun_direction)))
    radiance = albedo * (np.asarray(light.ambient) + np.asarray(light.sun_color) * cosine[..., None])
    # sky: vertical gradient toward the horizon
    dz = geo["dirs"][..., 2] / np.linalg.norm(geo["dirs"], axis=-1)
    sky = np.asarray(light.sky_color) * (0.85 + 0.15 * np.clip(dz, 0, 1))[..., None]
    rgb = np.where(hit[..., None], radiance, sky)
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def motion(scene, intr, pose0, pose1, geo, width, height):
    """Forward flow t -> t+1 and occlusion for one frame's geometry."""
    hit, points, dirs = geo["hit"], geo["points"], geo["dirs"]
    xs, ys = geo["xs"], geo["ys"]
    flow = np.zeros((height, width, 2))
    occl = np.zeros((height, width), dtype=np.uint8)

    # surfaces: project the hit point
    proj, z1 = project(intr, pose1, np.where(hit[..., None], points, 0.0))
    front = hit & (z1 > NEAR_PLANE)
    flow[..., 0] = np.where(front, proj[..., 0] - xs, 0.0)
    flow[..., 1] = np.where(front, proj[..., 1] - ys, 0.0)
    flow[hit & ~front] = UNKNOWN
    inside = front & (proj[..., 0] >= 0) & (proj[..., 0] < width) & (proj[..., 1] >= 0) & (proj[..., 1] < height)
    visible = np.zeros_like(hit)
    if inside.any():
        t1, _, _ = cast_pixels(scene, intr, pose1, proj[inside, 0], proj[inside, 1])
        visible[inside] = np.abs(t1 - z1[inside]) <= OCCLUSION_TOL * z1[inside]
    occl[hit & ~visible] = 255

    # sky: infinite depth, rotation-only homography
    sky = ~hit
    if sky.any():
        d1 = dirs[sky] @ pose1.rotation
        ahead = d1[:, 2] > 1e-9
        u = np.full(len(d1), UNKNOWN)
        v = np.full(len(d1), UNKNOWN)
        u[ahead] = intr.f * d1[ahead, 0] / d1[ahead, 2] + intr.cx - xs[sky][ahead]
        v[ahead] = intr.f * d1[ahead, 1] / d1[ahead, 2] + intr.cy - ys[sky][ahead]
        flow[sky] = np.stack([u, v], axis=1)
    return flow, occl


def render_frame(scene, trajectory, frame_index, resolution=None, with_flow=True):
    """Ground truth for one frame. ``resolution`` is (width, height) or a
    single int; the trajectory intrinsics are rescaled to match."""
    if resolution is None:
        resolution = trajectory.resolution
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    width, height = resolution
    if width < 16 or height < 16:
        raise ValueError(f"resolution must be at least 16x16, got {width}x{height}")
    n = trajectory.frame_count
    last = n - 1 if with_flow else n
    if not 0 <= frame_index < last:
        raise IndexError(f"frame_index {frame_index} out of range for {n} frames"
                         + (" (flow needs a successor)" if with_flow else ""))
    intr = trajectory.intrinsics_for(resolution)
    pose = trajectory.poses[frame_index]
    geo = _geometry(scene, intr, pose, width, height)
    flow = occl = None
    if with_flow:
        flow, occl = motion(scene, intr, pose, trajectory.poses[frame_index + 1], geo, width, height)
    return FrameGT(
        rgb=shade(scene, geo), depth=geo["depth"], normal=geo["n_cam"],
        label=geo["label"].astype(np.uint8), flow=flow, occlusion=occl,
        points=geo["points"], prim_id=geo["idx"])


def palette_rgb(label):
    lut = np.zeros((256, 3), dtype=np.uint8)
    for k, c in PALETTE.items():
        lut[k] = c
    return lut[label]
