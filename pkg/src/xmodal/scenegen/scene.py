"""Scene vocabulary, lighting presets and procedural placement.

World frame: x east, y north, z up; the ground is the plane z = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import GenerationError
from ..kernels import TYPE_BOX, TYPE_CYLINDER, TYPE_PLANE, TYPE_SPHERE
from ..rng import make_rng

CLASS_NAMES = ["sky", "grass", "path", "tree", "bush", "flower", "rock", "hedge"]
SKY, GRASS, PATH, TREE, BUSH, FLOWER, ROCK, HEDGE = range(8)
PALETTE = {
    SKY: (110, 170, 230),
    GRASS: (70, 140, 50),
    PATH: (190, 165, 120),
    TREE: (20, 90, 25),
    BUSH: (140, 200, 70),
    FLOWER: (230, 80, 160),
    ROCK: (128, 128, 128),
    HEDGE: (30, 150, 120),
}
_ALBEDO = {
    GRASS: (0.30, 0.55, 0.20),
    PATH: (0.62, 0.55, 0.42),
    TREE: (0.16, 0.42, 0.14),
    BUSH: (0.35, 0.60, 0.22),
    FLOWER: (0.85, 0.35, 0.60),
    ROCK: (0.50, 0.50, 0.48),
    HEDGE: (0.12, 0.45, 0.30),
}
TRUNK_ALBEDO = (0.35, 0.24, 0.14)
MAX_DEPTH = 200.0  # rays travelling further than this see sky


@dataclass(frozen=True)
class LightingPreset:
    name: str
    sun_direction: tuple  # direction light travels, unit, z < 0
    sun_color: tuple
    ambient: tuple
    sky_color: tuple


def _unit(*v):
    v = np.asarray(v, dtype=np.float64)
    return tuple(float(x) for x in v / np.linalg.norm(v))


LIGHTING_PRESETS = {
    "clear": LightingPreset("clear", _unit(-0.4, -0.3, -0.85), (1.0, 0.97, 0.90), (0.25, 0.28, 0.32), (0.53, 0.75, 0.95)),
    "cloudy": LightingPreset("cloudy", _unit(0.3, -0.5, -0.8), (0.60, 0.60, 0.62), (0.40, 0.40, 0.42), (0.70, 0.73, 0.78)),
    "overcast": LightingPreset("overcast", _unit(0.1, 0.1, -1.0), (0.25, 0.25, 0.26), (0.60, 0.60, 0.62), (0.78, 0.79, 0.80)),
    "sunset": LightingPreset("sunset", _unit(0.8, 0.2, -0.2), (1.0, 0.60, 0.30), (0.25, 0.18, 0.20), (0.95, 0.55, 0.35)),
    "twilight": LightingPreset("twilight", _unit(-0.7, 0.4, -0.08), (0.30, 0.30, 0.50), (0.12, 0.12, 0.20), (0.20, 0.22, 0.40)),
}
PRESET_NAMES = list(LIGHTING_PRESETS)


@dataclass(frozen=True)
class Primitive:
    shape: str  # "plane" | "sphere" | "box" | "cylinder"
    params: tuple
    class_id: int
    albedo: tuple

    def row(self):
        code = {"plane": TYPE_PLANE, "sphere": TYPE_SPHERE, "box": TYPE_BOX, "cylinder": TYPE_CYLINDER}[self.shape]
        out = [float(code)] + [float(p) for p in self.params]
        return out + [0.0] * (8 - len(out))


@dataclass(frozen=True)
class PathSegment:
    start: tuple
    end: tuple
    width: float


@dataclass(frozen=True)
class SceneDescription:
    primitives: tuple
    paths: tuple
    lighting: LightingPreset
    bounds: float  # half-extent of the square placement area, metres
    seed: int = 0

    def __post_init__(self):
        planes = [p for p in self.primitives if p.shape == "plane"]
        if len(planes) != 1:
            raise GenerationError(f"scene needs exactly one ground plane, found {len(planes)}")

    def prim_table(self):
        return np.array([p.row() for p in self.primitives], dtype=np.float64)

    def class_table(self):
        return np.array([p.class_id for p in self.primitives], dtype=np.int64)

    def albedo_table(self):
        return np.array([p.albedo for p in self.primitives], dtype=np.float64)

    def with_lighting(self, preset):
        if isinstance(preset, str):
            preset = LIGHTING_PRESETS[preset]
        return SceneDescription(self.primitives, self.paths, preset, self.bounds, self.seed)

    def ground_label(self, x, y):
        label = np.full(np.shape(x), GRASS, dtype=np.int64)
        for seg in self.paths:
            label[_segment_distance(x, y, seg) < seg.width / 2] = PATH
        return label

    def signed_distance(self, p):
        """Distance from point ``p`` to the nearest non-ground primitive surface
        (negative inside)."""
        p = np.asarray(p, dtype=np.float64)
        best = np.inf
        for prim in self.primitives:
            if prim.shape != "plane":
                best = min(best, _sdf(prim, p))
        return best


def _segment_distance(x, y, seg):
    ax, ay = seg.start
    bx, by = seg.end
    dx, dy = bx - ax, by - ay
    t = np.clip(((x - ax) * dx + (y - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    return np.hypot(x - (ax + t * dx), y - (ay + t * dy))


def _sdf(prim, p):
    if prim.shape == "sphere":
        cx, cy, cz, r = prim.params
        return float(np.linalg.norm(p - (cx, cy, cz)) - r)
    if prim.shape == "box":
        lo, hi = np.asarray(prim.params[:3]), np.asarray(prim.params[3:6])
        c, half = (lo + hi) / 2, (hi - lo) / 2
        q = np.abs(p - c) - half
        return float(np.linalg.norm(np.maximum(q, 0)) + min(q.max(), 0.0))
    cx, cy, r, z0, z1 = prim.params
    dr = math.hypot(p[0] - cx, p[1] - cy) - r
    dz = max(z0 - p[2], p[2] - z1)
    return float(math.hypot(max(dr, 0), max(dz, 0)) + min(max(dr, dz), 0.0))


@dataclass
class SceneParams:
    bounds: float = 12.0
    # densities keep label boundaries sparse enough at 64x64 for nearest-pixel
    # flow-warp label checks
    trees: tuple = (1, 3)
    bushes: tuple = (1, 4)
    flowers: tuple = (1, 3)
    rocks: tuple = (1, 2)
    hedges: tuple = (0, 1)
    paths: tuple = (0, 1)
    max_attempts: int = 1000


def _jitter(rng, base, amount=0.06):
    return tuple(float(np.clip(c + rng.uniform(-amount, amount), 0.02, 0.98)) for c in base)


def generate_scene(seed, params=None, lighting="clear"):
    """Deterministic scene for ``seed``.

    Objects are placed by rejection sampling in the square ``[-b, b]^2``:
    two footprints of radii r_i, r_j must have centres at least
    ``0.5 * (r_i + r_j)`` apart.
    """
    params = params or SceneParams()
    rng = make_rng(seed, 0)
    b = params.bounds
    prims = [Primitive("plane", (0.0,), GRASS, _ALBEDO[GRASS])]
    placed = []  # (x, y, footprint radius)

    def place(radius, kind):
        for _ in range(params.max_attempts):
            x, y = rng.uniform(-b, b, size=2)
            if all(math.hypot(x - px, y - py) >= 0.5 * (radius + pr) for px, py, pr in placed):
                placed.append((x, y, radius))
                return float(x), float(y)
        density = sum(math.pi * r * r for _, _, r in placed) / (4 * b * b)
        raise GenerationError(
            f"could not place {kind} after {params.max_attempts} attempts "
            f"(footprint density {density:.2f})")

    def count(rng_range):
        lo, hi = rng_range
        return int(rng.integers(lo, hi + 1))

    n_trees, n_bushes, n_flowers = count(params.trees), count(params.bushes), count(params.flowers)
    n_rocks, n_hedges, n_paths = count(params.rocks), count(params.hedges), count(params.paths)

    for _ in range(n_trees):
        canopy = rng.uniform(1.0, 2.0)
        trunk_r = rng.uniform(0.15, 0.3)
        trunk_h = rng.uniform(1.8, 3.0)
        x, y = place(canopy, "tree")
        prims.append(Primitive("cylinder", (x, y, trunk_r, 0.0, trunk_h + 0.3 * canopy), TREE,
                               _jitter(rng, TRUNK_ALBEDO)))
        prims.append(Primitive("sphere", (x, y, trunk_h + 0.6 * canopy, canopy), TREE,
                               _jitter(rng, _ALBEDO[TREE])))
    for _ in range(n_bushes):
        r = rng.uniform(0.4, 0.9)
        x, y = place(r, "bush")
        prims.append(Primitive("sphere", (x, y, 0.5 * r, r), BUSH, _jitter(rng, _ALBEDO[BUSH])))
    for _ in range(n_flowers):
        r = rng.uniform(0.15, 0.3)
        x, y = place(r, "flower")
        prims.append(Primitive("sphere", (x, y, 0.8 * r, r), FLOWER, _jitter(rng, _ALBEDO[FLOWER], 0.1)))
    for _ in range(n_rocks):
        sx, sy, sz = rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0), rng.uniform(0.2, 0.6)
        x, y = place(0.5 * math.hypot(sx, sy), "rock")
        prims.append(Primitive("box", (x - sx / 2, y - sy / 2, 0.0, x + sx / 2, y + sy / 2, sz), ROCK,
                               _jitter(rng, _ALBEDO[ROCK])))
    for _ in range(n_hedges):
        length, width, height = rng.uniform(2.0, 5.0), rng.uniform(0.5, 0.8), rng.uniform(0.8, 1.4)
        along_x = bool(rng.integers(0, 2))
        sx, sy = (length, width) if along_x else (width, length)
        x, y = place(0.5 * length, "hedge")
        prims.append(Primitive("box", (x - sx / 2, y - sy / 2, 0.0, x + sx / 2, y + sy / 2, height), HEDGE,
                               _jitter(rng, _ALBEDO[HEDGE])))
    paths = []
    for _ in range(n_paths):
        a = rng.uniform(0, 2 * math.pi)
        off = rng.uniform(-0.5 * b, 0.5 * b, size=2)
        d = np.array([math.cos(a), math.sin(a)]) * 1.5 * b
        paths.append(PathSegment(tuple(map(float, off - d)), tuple(map(float, off + d)),
                                 float(rng.uniform(1.0, 2.0))))
    preset = LIGHTING_PRESETS[lighting] if isinstance(lighting, str) else lighting
    return SceneDescription(tuple(prims), tuple(paths), preset, float(b), int(seed))
