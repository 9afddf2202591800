"""Joint multi-scale refinement network.

Per scale s: concat(modalities at 1/2^s) -> 2 x (conv kxk + ReLU) ->
bilinear upsample by 2^s. All scale outputs are concatenated and pass a
3-layer conv trunk, then a 1x1 head per task. Flow and normal heads predict
residuals on the full-resolution input; the segmentation head emits logits.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff.tensor import Parameter, default_dtype, no_grad
from ..errors import ConfigError, ShapeError, VersionError
from ..rng import make_rng
from .config import RefineConfig
from .pyramid import Pyramid, build_pyramid

TRUNK_LAYERS = 3
BRANCH_LAYERS = 2
CHECKPOINT_KIND = "xmodal.refinenet"
CHECKPOINT_VERSION = 1
SEG_PRIOR_EPS = 1e-4  # floor inside log(scores); confident inputs resist small corrections


class RefineModel:
    def __init__(self, config, seed=0):
        self.config = config
        self.seed = seed
        self.params = {}
        rng = make_rng(seed, 7)
        cfg = config
        k = cfg.kernel
        for s in range(cfg.scales):
            cin = cfg.input_channels
            for layer in range(BRANCH_LAYERS):
                self._conv(f"branch{s}.conv{layer}", cin, cfg.branch_channels, k, rng)
                cin = cfg.branch_channels
        for trunk in self.trunk_names():
            cin = cfg.scales * cfg.branch_channels
            for layer in range(TRUNK_LAYERS):
                self._conv(f"{trunk}.conv{layer}", cin, cfg.trunk_channels, k, rng)
                cin = cfg.trunk_channels
        for task in cfg.outputs:
            self._conv(f"head.{task}", cfg.trunk_channels, cfg.channels(task), 1, rng, zero=True)

    # -- structure ---------------------------------------------------------

    def trunk_names(self):
        if self.config.coupling == "loose":
            return [f"trunk.{t}" for t in self.config.outputs]
        return ["trunk"]

    def trunk_for(self, task):
        return f"trunk.{task}" if self.config.coupling == "loose" else "trunk"

    def _conv(self, name, cin, cout, k, rng, zero=False):
        dt = default_dtype()
        if zero:
            w = np.zeros((cout, cin, k, k), dtype=dt)
        else:
            w = (rng.standard_normal((cout, cin, k, k)) * np.sqrt(2.0 / (cin * k * k))).astype(dt)
        self.params[f"{name}.weight"] = Parameter(w, f"{name}.weight")
        self.params[f"{name}.bias"] = Parameter(np.zeros(cout, dtype=dt), f"{name}.bias")

    def parameters(self):
        return list(self.params.values())

    def parameter_count(self, prefix=None):
        return int(sum(p.data.size for name, p in self.params.items()
                       if prefix is None or name.startswith(prefix)))

    def _apply(self, name, x, relu=True):
        y = ad.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])
        return ad.relu(y) if relu else y

    # -- forward -------------------------------------------------------------

    def features(self, pyramid):
        """Concatenated, upsampled scale-branch outputs."""
        cfg = self.config
        if pyramid.scales != cfg.scales:
            raise ConfigError(f"pyramid has {pyramid.scales} scales, model expects {cfg.scales}")
        outs = []
        for s, level in enumerate(pyramid.levels):
            if set(level) != set(cfg.inputs):
                raise ConfigError(f"pyramid modalities {sorted(level)} != configured {list(cfg.inputs)}")
            parts = []
            for m in cfg.inputs:
                a = level[m]
                if a.shape[1] != cfg.channels(m):
                    raise ShapeError(f"{m}: {a.shape[1]} channels, expected {cfg.channels(m)}")
                parts.append(a / cfg.flow_scale if m == "flow" else a)
            x = ad.concat_channels([ad.Tensor(p) for p in parts])
            for layer in range(BRANCH_LAYERS):
                x = self._apply(f"branch{s}.conv{layer}", x)
            outs.append(ad.upsample_bilinear(x, 2 ** s))
        return ad.concat_channels(outs)

    def trunk(self, name, feats):
        x = feats
        for layer in range(TRUNK_LAYERS):
            x = self._apply(f"{name}.conv{layer}", x)
        return x

    def forward(self, pyramid, return_trunks=False):
        """Per-task full-resolution predictions as NCHW tensors."""
        cfg = self.config
        feats = self.features(pyramid)
        trunks = {name: self.trunk(name, feats) for name in self.trunk_names()}
        base = pyramid.levels[0]
        h, w = pyramid.height, pyramid.width
        out = {}
        for task in cfg.outputs:
            r = self._apply(f"head.{task}", trunks[self.trunk_for(task)], relu=False)
            if task == "flow":
                y = ad.add(ad.Tensor(base["flow"]), ad.mul_scalar(r, cfg.flow_scale))
            elif task == "normals":
                y = ad.normalize_channels(ad.add(ad.Tensor(base["normals"]), r))
            elif cfg.seg_residual:
                y = ad.add(ad.Tensor(np.log(base["segmentation"] + SEG_PRIOR_EPS)), r)
            else:
                y = r
            out[task] = ad.crop(y, h, w)
        if return_trunks:
            return out, trunks
        return out

    def __call__(self, pyramid):
        return self.forward(pyramid)


def prepare(model, inputs):
    return build_pyramid(inputs, model.config.scales, dtype=default_dtype())


def infer(model, inputs):
    """Channels-last numpy predictions for a dict of channels-last inputs.

    Flow (N,H,W,2); segmentation logits (N,H,W,C); normals (N,H,W,3)."""
    with no_grad():
        out = model.forward(prepare(model, inputs))
    return {t: np.moveaxis(v.data, 1, -1) for t, v in out.items()}


def save_model(model, path):
    meta = {"kind": CHECKPOINT_KIND, "version": CHECKPOINT_VERSION,
            "config": model.config.to_dict(), "seed": model.seed}
    ad.save_parameters(model.parameters(), path, meta)


def load_model(path, expected_config=None):
    meta, arrays = ad.load_parameters(path)
    if meta.get("kind") != CHECKPOINT_KIND or meta.get("version") != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: not a v{CHECKPOINT_VERSION} refinement checkpoint")
    cfg = RefineConfig.from_dict(meta["config"])
    if expected_config is not None and expected_config.to_dict() != cfg.to_dict():
        raise VersionError(f"{path}: checkpoint config does not match the requested config")
    model = RefineModel(cfg, seed=meta.get("seed", 0))
    if set(arrays) != set(model.params):
        raise VersionError(f"{path}: parameter set does not match the configuration")
    for name, arr in arrays.items():
        p = model.params[name]
        if arr.shape != p.data.shape:
            raise VersionError(f"{path}: {name} has shape {arr.shape}, expected {p.data.shape}")
        p.data = arr.astype(p.data.dtype)
    return model
