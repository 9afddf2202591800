"""Dataset generation and the on-disk layout

    <root>/manifest.json
    <root>/scene_<id>/<lighting>/{rgb,depth,normal,label,flow,occl}/frame_%05d.<ext>

rgb .ppm, depth .pfm, normal .pfm, label .pgm, flow .flo, occl .pgm. The last
frame of a sequence has no flow / occl file.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

from .. import dataio
from ..errors import DatasetError, XModalError
from ..rng import derive_seed
from .render import _geometry, motion, shade
from .scene import CLASS_NAMES, LIGHTING_PRESETS, PALETTE, SceneParams, generate_scene
from .trajectory import generate_trajectory

MODALITY_DIRS = {"rgb": ".ppm", "depth": ".pfm", "normal": ".pfm", "label": ".pgm",
                 "flow": ".flo", "occl": ".pgm"}


@dataclass
class GenConfig:
    scenes: int = 10
    presets: list = field(default_factory=lambda: list(LIGHTING_PRESETS))
    frames: int = 20
    width: int = 64
    height: int = 64
    fov_deg: float = 70.0
    seed: int = 0
    scene: SceneParams = field(default_factory=SceneParams)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        scene = SceneParams(**{k: tuple(v) if isinstance(v, list) else v
                               for k, v in doc.pop("scene", {}).items()})
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise XModalError(f"unknown generation config keys: {sorted(unknown)}")
        return cls(scene=scene, **doc)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self):
        d = asdict(self)
        d["scene"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["scene"].items()}
        return d


def frame_path(root, scene_id, lighting, modality, index, prefix=""):
    return os.path.join(root, f"scene_{scene_id:03d}", lighting, modality,
                        f"{prefix}frame_{index:05d}{MODALITY_DIRS[modality]}")


def palette_entries():
    return [dataio.PaletteEntry(i, name, tuple(PALETTE[i])) for i, name in enumerate(CLASS_NAMES)]


def _write(fn, data, path):
    try:
        fn(data, path)
    except OSError as exc:
        raise DatasetError(f"{path}: {exc.strerror or exc}") from exc


def _render_scene(config, seed, sid, out_dir):
    res = (config.width, config.height)
    scene = generate_scene(derive_seed(seed, sid), config.scene)
    traj = generate_trajectory(derive_seed(seed, sid), scene, config.frames, res, config.fov_deg)
    intr = traj.intrinsics_for(res)
    for lighting in config.presets:
        for mod in MODALITY_DIRS:
            os.makedirs(os.path.join(out_dir, f"scene_{sid:03d}", lighting, mod), exist_ok=True)
    for k in range(config.frames):
        pose = traj.poses[k]
        geo = _geometry(scene, intr, pose, *res)
        flow = occl = None
        if k + 1 < config.frames:
            flow, occl = motion(scene, intr, pose, traj.poses[k + 1], geo, *res)
        for lighting in config.presets:
            lit = scene.with_lighting(lighting)
            fp = lambda mod: frame_path(out_dir, sid, lighting, mod, k)  # noqa: E731
            _write(dataio.write_pnm, shade(lit, geo), fp("rgb"))
            _write(dataio.write_pfm, geo["depth"], fp("depth"))
            _write(dataio.write_pfm, geo["n_cam"], fp("normal"))
            _write(dataio.write_pnm, geo["label"].astype("uint8"), fp("label"))
            if flow is not None:
                _write(dataio.write_flo, flow, fp("flow"))
                _write(dataio.write_pnm, occl, fp("occl"))
    return [dataio.SceneRecord(scene_id=sid, lighting=lighting, frame_count=config.frames,
                               intrinsics=intr, poses=traj.poses) for lighting in config.presets]


def generate_dataset(config, seed=None, out_dir=".", jobs=1):
    """Render every (scene, preset, frame) and write files plus the manifest.

    Geometry and motion are computed once per frame and shared across the
    lighting presets; only the RGB shading differs. With ``jobs`` > 1 scenes
    render in worker processes; every file depends only on its own scene,
    so the output does not depend on the schedule."""
    if seed is None:
        seed = config.seed
    if config.frames < 2:
        raise XModalError("frames must be >= 2")
    for p in config.presets:
        if p not in LIGHTING_PRESETS:
            raise XModalError(f"unknown lighting preset {p!r}")
    res = (config.width, config.height)
    sids = range(config.scenes)
    if jobs > 1 and config.scenes > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_scene = list(pool.map(_render_scene, *zip(*[(config, seed, s, out_dir) for s in sids])))
    else:
        per_scene = [_render_scene(config, seed, s, out_dir) for s in sids]
    records = [r for recs in per_scene for r in recs]
    manifest = dataio.DatasetManifest(
        scenes=records, class_palette=palette_entries(), rng_seed=int(seed),
        resolution=res, config=config.to_dict())
    dataio.write_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest
