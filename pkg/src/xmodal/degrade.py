"""Seeded corruption of ground-truth modalities, standing in for trained
baseline predictors."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy import ndimage

from .autodiff.ops import downsample_array, upsample_array
from .dataio import flow_valid_mask
from .errors import ConfigError, ShapeError

MODALITIES = ("flow", "segmentation", "normals")


@dataclass(frozen=True)
class DegradeProfile:
    modality: str
    blur_sigma: float = 0.0
    noise_sigma: float = 0.0  # px for flow, degrees for normals
    label_flip_prob: float = 0.0
    boundary_erode: int = 0
    downup_factor: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ConfigError(f"unknown modality {self.modality!r}")
        for name in ("blur_sigma", "noise_sigma", "boundary_erode"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.label_flip_prob <= 1:
            raise ConfigError("label_flip_prob must lie in [0, 1]")
        f = self.downup_factor
        if f < 1 or f & (f - 1):
            raise ConfigError(f"downup_factor must be a power of two, got {f}")

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known})


DEFAULT_PROFILES = {
    "flow": DegradeProfile("flow", blur_sigma=2.0, noise_sigma=0.5, downup_factor=2),
    "segmentation": DegradeProfile("segmentation", blur_sigma=1.0, label_flip_prob=0.05,
                                   boundary_erode=1),
    "normals": DegradeProfile("normals", blur_sigma=1.0, noise_sigma=12.0),
}


def identity_profile(modality):
    return DegradeProfile(modality)


def load_profiles(path):
    with open(path) as f:
        doc = json.load(f)
    return {m: DegradeProfile.from_dict({"modality": m, **doc[m]}) for m in doc}


def _blur(channels_last, sigma):
    if sigma <= 0:
        return channels_last
    return ndimage.gaussian_filter(channels_last, sigma=(sigma, sigma, 0), mode="reflect", truncate=3.0)


def _downup(channels_last, factor):
    if factor == 1:
        return channels_last
    h, w, c = channels_last.shape
    ph, pw = (-h) % factor, (-w) % factor
    a = np.pad(channels_last, ((0, ph), (0, pw), (0, 0)), mode="reflect")
    a = np.moveaxis(a, -1, 0)
    a = upsample_array(downsample_array(a, factor), factor)
    return np.moveaxis(a, 0, -1)[:h, :w]


def degrade_flow(flow, profile):
    """Blur, add Gaussian noise, then down/up-sample. Unknown-flow pixels are
    treated as zero motion while filtering and keep the sentinel."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeError(f"flow must be HxWx2, got {flow.shape}")
    if profile.modality != "flow":
        raise ConfigError(f"profile is for {profile.modality}, not flow")
    rng = np.random.default_rng(profile.seed)
    valid = flow_valid_mask(flow)
    out = np.where(valid[..., None], flow, 0.0)
    out = _blur(out, profile.blur_sigma)
    if profile.noise_sigma > 0:
        out = out + rng.normal(0.0, profile.noise_sigma, size=out.shape)
    out = _downup(out, profile.downup_factor)
    out[~valid] = flow[~valid]
    return out.astype(np.float32)


def one_hot(labels, class_count):
    return np.eye(class_count, dtype=np.float64)[labels]


def degrade_segmentation(labels, class_count, profile):
    """Soft score map (H, W, C) from a label map.

    Steps: one-hot; pixels within ``boundary_erode`` px of a class boundary
    get uniform scores; each connected region is relabelled to a random
    other class with probability ``label_flip_prob``; Gaussian blur;
    per-pixel renormalisation."""
    if class_count < 2:
        raise ConfigError("class_count must be >= 2")
    if profile.modality != "segmentation":
        raise ConfigError(f"profile is for {profile.modality}, not segmentation")
    labels = np.asarray(labels).astype(np.int64)
    if labels.min() < 0 or labels.max() >= class_count:
        raise ShapeError("labels out of range for class_count")
    rng = np.random.default_rng(profile.seed)
    work = labels.copy()
    if profile.label_flip_prob > 0:
        for c in range(class_count):
            regions, n = ndimage.label(labels == c)
            for r in range(1, n + 1):
                if rng.random() < profile.label_flip_prob:
                    other = int(rng.integers(0, class_count - 1))
                    work[regions == r] = other if other < c else other + 1
    scores = one_hot(work, class_count)
    if profile.boundary_erode > 0:
        band = np.zeros(labels.shape, dtype=bool)
        for c in np.unique(labels):
            inside = labels == c
            eroded = ndimage.binary_erosion(inside, iterations=profile.boundary_erode, border_value=1)
            band |= inside & ~eroded
        scores[band] = 1.0 / class_count
    scores = _blur(scores, profile.blur_sigma)
    scores = np.maximum(scores, 0.0)
    scores /= scores.sum(axis=-1, keepdims=True)
    return scores.astype(np.float32)


def _perpendicular_axes(n, rng):
    """Random unit vectors orthogonal to each row of ``n``."""
    r = rng.normal(size=n.shape)
    a = r - n * np.sum(r * n, axis=-1, keepdims=True)
    norm = np.linalg.norm(a, axis=-1, keepdims=True)
    # resample the (measure-zero) parallel draws deterministically
    a = np.where(norm > 1e-9, a / np.maximum(norm, 1e-12), np.cross(n, [0.577, 0.577, 0.577]))
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def degrade_normals(normals, profile, valid=None):
    """Rotate each valid normal by angle |N(0, noise_sigma deg)| about a random
    axis perpendicular to it, blur channels, renormalise."""
    if profile.modality != "normals":
        raise ConfigError(f"profile is for {profile.modality}, not normals")
    n = np.asarray(normals, dtype=np.float64)
    if valid is None:
        valid = np.linalg.norm(n, axis=-1) > 0.5
    if profile.noise_sigma == 0 and profile.blur_sigma == 0:
        return n.astype(np.float32)
    rng = np.random.default_rng(profile.seed)
    out = n.copy()
    if profile.noise_sigma > 0 and valid.any():
        nv = n[valid]
        angle = np.abs(rng.normal(0.0, np.radians(profile.noise_sigma), size=len(nv)))[:, None]
        axis = _perpendicular_axes(nv, rng)
        # Rodrigues with axis ⟂ n: n cos + (axis x n) sin
        out[valid] = nv * np.cos(angle) + np.cross(axis, nv) * np.sin(angle)
    if profile.blur_sigma > 0:
        out = _blur(np.where(valid[..., None], out, 0.0), profile.blur_sigma)
    norm = np.linalg.norm(out, axis=-1, keepdims=True)
    out = np.where(valid[..., None] & (norm > 1e-12), out / np.maximum(norm, 1e-12), n)
    return out.astype(np.float32)


def degrade(modality, data, profile, class_count=None, valid=None):
    if modality == "flow":
        return degrade_flow(data, profile)
    if modality == "segmentation":
        return degrade_segmentation(data, class_count, profile)
    return degrade_normals(data, profile, valid)
