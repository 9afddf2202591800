"""Procedural nature scenes rendered by analytic ray casting."""
from .scene import (
    CLASS_NAMES, LIGHTING_PRESETS, PALETTE, PRESET_NAMES, LightingPreset, PathSegment,
    Primitive, SceneDescription, SceneParams, generate_scene,
)
from .trajectory import CameraTrajectory, generate_trajectory, look_rotation
from .render import FrameGT, SKY_DEPTH, UNKNOWN, cast_pixels, project, render_frame

__all__ = [
    "CLASS_NAMES", "LIGHTING_PRESETS", "PALETTE", "PRESET_NAMES", "LightingPreset", "PathSegment",
    "Primitive", "SceneDescription", "SceneParams", "generate_scene", "CameraTrajectory",
    "generate_trajectory", "look_rotation", "FrameGT", "SKY_DEPTH", "UNKNOWN", "cast_pixels",
    "project", "render_frame",
]
