"""Camera paths: Catmull-Rom splines through random waypoints, sampled at
constant arc-length steps. Camera frame: x right, y down, z forward."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..dataio import Intrinsics, Pose
from ..errors import GenerationError, ValidationError
from ..rng import make_rng

EYE_HEIGHT = (1.0, 2.0)
MAX_STEP_FRACTION = 0.05  # of the scene extent (2 * bounds), per frame
STEP_RANGE = (0.15, 0.35)  # metres per frame
MAX_TURN_DEG = 8.0  # camera rotation between consecutive frames
PITCH_RANGE = (5.0, 12.0)  # degrees below the horizon
CLEARANCE = 0.4  # metres from any object surface


@dataclass
class CameraTrajectory:
    intrinsics: Intrinsics
    poses: list  # list of Pose (camera-to-world)
    resolution: tuple  # (width, height) the intrinsics refer to
    frame_period: float = 0.1

    @property
    def frame_count(self):
        return len(self.poses)

    def centers(self):
        return np.array([p.t for p in self.poses], dtype=np.float64)

    def intrinsics_for(self, resolution):
        w0, h0 = self.resolution
        w, h = resolution
        sx, sy = w / w0, h / h0
        if not math.isclose(sx, sy):
            raise ValidationError(f"resolution {resolution} changes the aspect ratio of {self.resolution}")
        k = self.intrinsics
        return Intrinsics(k.f * sx, k.cx * sx, k.cy * sy)


def look_rotation(forward):
    """Camera-to-world rotation whose z axis is ``forward`` and whose y axis
    points as close to world-down as possible."""
    f = np.asarray(forward, dtype=np.float64)
    f = f / np.linalg.norm(f)
    right = np.cross(f, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    return np.stack([right, down, f], axis=1)


def rotation_angle_deg(Ra, Rb):
    Ra, Rb = np.asarray(Ra), np.asarray(Rb)
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def catmull_rom(points, samples_per_segment=200):
    """Dense uniform Catmull-Rom curve through every point (end points
    duplicated as phantom controls)."""
    P = np.asarray(points, dtype=np.float64)
    P = np.vstack([P[:1], P, P[-1:]])
    u = np.linspace(0, 1, samples_per_segment, endpoint=False)[:, None]
    out = []
    for i in range(1, len(P) - 2):
        p0, p1, p2, p3 = P[i - 1], P[i], P[i + 1], P[i + 2]
        out.append(0.5 * ((2 * p1) + (-p0 + p2) * u + (2 * p0 - 5 * p1 + 4 * p2 - p3) * u ** 2
                          + (-p0 + 3 * p1 - 3 * p2 + p3) * u ** 3))
    out.append(P[-2][None])
    return np.vstack(out)


def default_intrinsics(resolution, fov_deg=70.0):
    w, h = resolution
    f = (w / 2) / math.tan(math.radians(fov_deg) / 2)
    return Intrinsics(float(f), w / 2.0, h / 2.0)


def generate_trajectory(seed, scene, frame_count, resolution=(64, 64), fov_deg=70.0,
                        max_retries=200):
    """Smooth camera path through ``scene`` with ``frame_count`` poses."""
    if frame_count < 2:
        raise ValidationError("frame_count must be >= 2")
    rng = make_rng(seed, 1)
    b = scene.bounds
    max_step = MAX_STEP_FRACTION * 2 * b
    for _ in range(max_retries):
        n_way = int(rng.integers(4, 7))
        way = np.column_stack([rng.uniform(-0.7 * b, 0.7 * b, size=(n_way, 2)),
                               rng.uniform(*EYE_HEIGHT, size=n_way)])
        curve = catmull_rom(way)
        curve[:, 2] = np.clip(curve[:, 2], *EYE_HEIGHT)
        seglen = np.linalg.norm(np.diff(curve, axis=0), axis=1)
        arclen = np.concatenate([[0.0], np.cumsum(seglen)])
        total = arclen[-1]
        step = min(rng.uniform(*STEP_RANGE), total / (frame_count - 1))
        if step <= 0 or step >= max_step:
            continue
        s0 = rng.uniform(0, total - step * (frame_count - 1))
        s = s0 + step * np.arange(frame_count)
        centers = np.column_stack([np.interp(s, arclen, curve[:, k]) for k in range(3)])
        if any(scene.signed_distance(c) < CLEARANCE for c in centers):
            continue
        ds = min(0.25, 0.5 * step)
        ahead = np.column_stack([np.interp(s + ds, arclen, curve[:, k]) for k in range(3)])
        behind = np.column_stack([np.interp(s - ds, arclen, curve[:, k]) for k in range(3)])
        tangent = ahead - behind
        pitch = math.radians(rng.uniform(*PITCH_RANGE))
        blend = rng.uniform(0.2, 0.4)
        poses = []
        for c, tg in zip(centers, tangent):
            t2 = tg[:2] / (np.linalg.norm(tg[:2]) + 1e-12)
            to_c = -c[:2] / (np.linalg.norm(c[:2]) + 1e-12)
            w = blend * min(1.0, np.linalg.norm(c[:2]) / 3.0)
            h = (1 - w) * t2 + w * to_c
            h = h / np.linalg.norm(h) if np.linalg.norm(h) > 1e-3 else t2
            fwd = np.array([h[0] * math.cos(pitch), h[1] * math.cos(pitch), -math.sin(pitch)])
            R = look_rotation(fwd)
            poses.append(Pose(R=R.tolist(), t=c.tolist()))
        if max(rotation_angle_deg(a.R, b.R) for a, b in zip(poses, poses[1:])) > MAX_TURN_DEG:
            continue  # cusp or sharp bend in the spline
        return CameraTrajectory(default_intrinsics(resolution, fov_deg), poses, tuple(resolution))
    raise GenerationError(f"no clear camera path found after {max_retries} waypoint draws")
