"""Modality converters and visual encoders."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .dataio import flow_valid_mask
from .errors import ConfigError, PaletteError, ValidationError
from .kernels import fit_normals

SKY_DEPTH_MIN = 1e8  # depths at or above this are the sky / far-plane sentinel


@dataclass
class NormalEstimationConfig:
    window: int = 3
    depth_discontinuity_ratio: float = 0.05

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ConfigError(f"window must be an odd integer >= 3, got {self.window}")
        if not 0 < self.depth_discontinuity_ratio < 1:
            raise ConfigError("depth_discontinuity_ratio must lie in (0, 1)")


def backproject(depth, intrinsics):
    """Camera-space points X = depth * K^-1 (x, y, 1) at pixel centres."""
    h, w = depth.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    x = (xs + 0.5 - intrinsics.cx) / intrinsics.f
    y = (ys + 0.5 - intrinsics.cy) / intrinsics.f
    return np.stack([x * depth, y * depth, depth], axis=-1)


def normals_from_depth(depth, intrinsics, cfg=None, valid=None, backend=None):
    """Surface normals by windowed plane fitting on back-projected depth.

    Returns ``(normals, ok)``; pixels that are invalid or have fewer than
    three usable neighbours get a zero normal and ``ok = False``.
    """
    cfg = cfg or NormalEstimationConfig()
    depth = np.asarray(depth, dtype=np.float64)
    if valid is None:
        valid = np.isfinite(depth) & (depth < SKY_DEPTH_MIN)
    valid = np.asarray(valid, dtype=bool)
    if np.any(depth[valid] <= 0):
        raise ValidationError("non-positive depth at a valid pixel")
    pts = backproject(np.where(valid, depth, 1.0), intrinsics)
    return fit_normals(pts, depth, valid, cfg.window, cfg.depth_discontinuity_ratio, backend=backend)


def discontinuity_mask(depth, ratio=0.05, band=0):
    """Pixels next to a relative depth jump >= ``ratio`` between 4-neighbours
    (sky counts as a far surface), dilated by ``band`` pixels."""
    d = np.asarray(depth, dtype=np.float64)
    edge = np.zeros(d.shape, dtype=bool)
    for axis in (0, 1):
        a = d[1:] if axis == 0 else d[:, 1:]
        b = d[:-1] if axis == 0 else d[:, :-1]
        jump = np.abs(a - b) >= ratio * np.minimum(a, b)
        if axis == 0:
            edge[1:] |= jump
            edge[:-1] |= jump
        else:
            edge[:, 1:] |= jump
            edge[:, :-1] |= jump
    if band > 0 and edge.any():
        edge = ndimage.binary_dilation(edge, iterations=band)
    return edge


def angular_error_deg(a, b):
    cos = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(cos))


# ---------------------------------------------------------------------------
# flow colour wheel


def make_colorwheel():
    """Middlebury colour wheel (55 hues: RY 15, YG 6, GC 4, CB 11, BM 13, MR 6)."""
    RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((RY + YG + GC + CB + BM + MR, 3))
    col = 0
    wheel[col:col + RY, 0] = 255
    wheel[col:col + RY, 1] = np.floor(255 * np.arange(RY) / RY)
    col += RY
    wheel[col:col + YG, 0] = 255 - np.floor(255 * np.arange(YG) / YG)
    wheel[col:col + YG, 1] = 255
    col += YG
    wheel[col:col + GC, 1] = 255
    wheel[col:col + GC, 2] = np.floor(255 * np.arange(GC) / GC)
    col += GC
    wheel[col:col + CB, 1] = 255 - np.floor(255 * np.arange(CB) / CB)
    wheel[col:col + CB, 2] = 255
    col += CB
    wheel[col:col + BM, 2] = 255
    wheel[col:col + BM, 0] = np.floor(255 * np.arange(BM) / BM)
    col += BM
    wheel[col:col + MR, 2] = 255 - np.floor(255 * np.arange(MR) / MR)
    wheel[col:col + MR, 0] = 255
    return wheel / 255.0


_WHEEL = make_colorwheel()


def flow_to_color(flow, max_magnitude="auto"):
    """Colour-wheel encoding: hue from the flow angle (angle 0 = +u is the
    first wheel entry, pure red), saturation min(1, |f| / max_magnitude).
    Zero flow is white; invalid pixels are black."""
    flow = np.asarray(flow, dtype=np.float64)
    valid = flow_valid_mask(flow)
    u = np.where(valid, flow[..., 0], 0.0)
    v = np.where(valid, flow[..., 1], 0.0)
    mag = np.hypot(u, v)
    if max_magnitude == "auto" or max_magnitude is None:
        max_magnitude = float(np.percentile(mag[valid], 99)) if valid.any() else 0.0
        if max_magnitude <= 0:
            max_magnitude = 1.0
    elif max_magnitude <= 0:
        raise ConfigError(f"max_magnitude must be positive, got {max_magnitude}")
    sat = np.minimum(1.0, mag / max_magnitude)
    ncols = len(_WHEEL)
    angle = np.mod(np.arctan2(v, u), 2 * np.pi)
    fk = angle / (2 * np.pi) * ncols
    k0 = np.floor(fk).astype(int) % ncols
    k1 = (k0 + 1) % ncols
    frac = (fk - np.floor(fk))[..., None]
    hue = (1 - frac) * _WHEEL[k0] + frac * _WHEEL[k1]
    rgb = 1 - sat[..., None] * (1 - hue)
    rgb[~valid] = 0.0
    return np.round(rgb * 255).astype(np.uint8)


def flow_magnitude(flow):
    """Grayscale flow magnitude normalised to its 99th percentile."""
    flow = np.asarray(flow, dtype=np.float64)
    valid = flow_valid_mask(flow)
    mag = np.where(valid, np.hypot(flow[..., 0], flow[..., 1]), 0.0)
    top = float(np.percentile(mag[valid], 99)) if valid.any() else 0.0
    if top <= 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    return np.round(255 * np.minimum(1.0, mag / top)).astype(np.uint8)


def normal_to_rgb(normals, eps=1e-6):
    n = np.asarray(normals, dtype=np.float64)
    rgb = np.round(255 * (n + 1) / 2)
    rgb[np.linalg.norm(n, axis=-1) < eps] = 0
    return np.clip(rgb, 0, 255).astype(np.uint8)


def label_to_rgb(labels, palette):
    """``palette`` maps class id -> RGB (dict or sequence of PaletteEntry)."""
    if not isinstance(palette, dict):
        palette = {p.class_id: tuple(p.rgb) for p in palette}
    labels = np.asarray(labels)
    missing = sorted(set(np.unique(labels).tolist()) - set(palette))
    if missing:
        raise PaletteError(f"labels {missing} are not in the palette")
    lut = np.zeros((max(max(palette), int(labels.max(initial=0))) + 1, 3), dtype=np.uint8)
    for k, c in palette.items():
        lut[k] = c
    return lut[labels]
