"""Multi-scale inputs: level s holds every modality sub-sampled by 2^s."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff.ops import downsample_array
from ..dataio import flow_valid_mask
from ..errors import ShapeError


@dataclass
class Pyramid:
    levels: list  # levels[s][modality] -> (N, C, H/2^s, W/2^s) float array
    height: int  # original size before padding
    width: int

    @property
    def scales(self):
        return len(self.levels)


def to_nchw(a):
    a = np.asarray(a)
    if a.ndim == 3:
        a = a[None]
    return np.ascontiguousarray(np.moveaxis(a, -1, 1))


def _renormalize_scores(s):
    total = s.sum(axis=1, keepdims=True)
    return s / np.where(total > 0, total, 1.0)


def _renormalize_normals(n, eps=1e-12):
    norm = np.sqrt(np.sum(n * n, axis=1, keepdims=True))
    return np.where(norm > eps, n / np.maximum(norm, eps), 0.0)


def build_pyramid(inputs, scales, dtype=np.float32):
    """``inputs`` maps modality -> (N, H, W, C) or (H, W, C) channels-last arrays.

    Unknown-flow pixels enter as zero motion. Sizes not divisible by
    2^(scales-1) are padded at the bottom/right by reflection; the original
    size is recorded for cropping."""
    arrays = {m: to_nchw(a).astype(np.float64) for m, a in inputs.items()}
    shapes = {(a.shape[0], a.shape[2], a.shape[3]) for a in arrays.values()}
    if len(shapes) != 1:
        raise ShapeError(f"modality maps disagree on N/H/W: {sorted(shapes)}")
    n, h, w = shapes.pop()
    if "flow" in arrays:
        f = arrays["flow"]
        valid = flow_valid_mask(np.moveaxis(f, 1, -1))
        arrays["flow"] = np.where(valid[:, None], f, 0.0)
    m = 2 ** (scales - 1)
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        arrays = {k: np.pad(a, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect" if min(h, w) > max(ph, pw) else "edge")
                  for k, a in arrays.items()}
    levels = []
    for s in range(scales):
        f = 2 ** s
        level = {}
        for k, a in arrays.items():
            d = downsample_array(a, f)
            if k == "flow":
                d = d / f
            elif k == "segmentation" and f > 1:
                d = _renormalize_scores(d)
            elif k == "normals" and f > 1:
                d = _renormalize_normals(d)
            level[k] = d.astype(dtype)
        levels.append(level)
    return Pyramid(levels, h, w)
