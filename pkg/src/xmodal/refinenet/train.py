"""Supervised training of the refinement network on modality maps only."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff.tensor import check_finite
from ..errors import ConfigError, DivergenceError, ShapeError
from ..rng import make_rng
from .model import infer, prepare


@dataclass
class RefineData:
    """Frames for training or evaluation, channels-last.

    ``inputs`` maps modality -> (N, H, W, C) float32 maps (predictions or
    GT). Targets: flow (N,H,W,2) + flow_valid, labels (N,H,W) int,
    normals (N,H,W,3) + normals_valid."""
    inputs: dict
    flow: np.ndarray = None
    flow_valid: np.ndarray = None
    labels: np.ndarray = None
    normals: np.ndarray = None
    normals_valid: np.ndarray = None

    def __len__(self):
        return len(next(iter(self.inputs.values())))

    @property
    def size(self):
        a = next(iter(self.inputs.values()))
        return a.shape[1], a.shape[2]

    def subset(self, idx):
        pick = lambda a: None if a is None else a[idx]
        return RefineData({m: a[idx] for m, a in self.inputs.items()}, pick(self.flow),
                          pick(self.flow_valid), pick(self.labels), pick(self.normals),
                          pick(self.normals_valid))

    def crop(self, idx, ys, xs, size):
        """Batch of ``size`` x ``size`` crops at per-sample offsets."""
        def cut(a):
            if a is None:
                return None
            return np.stack([a[i, y:y + size, x:x + size] for i, y, x in zip(idx, ys, xs)])
        return RefineData({m: cut(a) for m, a in self.inputs.items()}, cut(self.flow),
                          cut(self.flow_valid), cut(self.labels), cut(self.normals),
                          cut(self.normals_valid))

    def require(self, tasks):
        for t in tasks:
            have = {"flow": self.flow is not None and self.flow_valid is not None,
                    "segmentation": self.labels is not None,
                    "normals": self.normals is not None and self.normals_valid is not None}[t]
            if not have:
                raise ConfigError(f"training data has no ground truth for task {t!r}")


@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 8
    crop: int = 32  # 0 trains on full frames
    steps_per_epoch: int = 0  # 0 -> one pass over the frames
    seed: int = 0
    loss_weights: dict = field(default_factory=dict)  # overrides; 0 disables a task
    class_balance: bool = False  # median-frequency weights for the segmentation loss


def class_balance_weights(labels, class_count, cap=10.0):
    """Median-frequency balancing: w_c = median(freq) / freq_c over classes
    present in ``labels``; absent classes get weight 0, weights capped."""
    freq = np.bincount(np.asarray(labels).ravel(), minlength=class_count)[:class_count].astype(np.float64)
    freq /= freq.sum()
    present = freq > 0
    w = np.zeros(class_count)
    w[present] = np.minimum(np.median(freq[present]) / freq[present], cap)
    return w


def task_loss(task, pred, data, class_weights=None):
    """Loss of one task on an NCHW prediction tensor."""
    if task == "flow":
        gt = np.moveaxis(data.flow, -1, 1)
        gt = np.where(data.flow_valid[:, None], gt, 0.0)
        return ad.epe_loss(pred, gt, data.flow_valid)
    if task == "segmentation":
        return ad.softmax_cross_entropy(pred, data.labels, class_weights=class_weights)
    return ad.cosine_normal_loss(pred, np.moveaxis(data.normals, -1, 1), data.normals_valid)


def _weights(model, cfg):
    w = dict(model.config.loss_weights)
    for t, v in cfg.loss_weights.items():
        if t not in w:
            raise ConfigError(f"loss weight given for non-output task {t!r}")
        if v < 0:
            raise ConfigError(f"loss weight for {t} must be >= 0")
        w[t] = float(v)
    if not any(v > 0 for v in w.values()):
        raise ConfigError("every task has zero loss weight")
    return w


def _masked_empty(task, data):
    if task == "flow":
        return not data.flow_valid.any()
    if task == "normals":
        return not data.normals_valid.any()
    return False


def train_step(model, opt, batch, weights, class_weights=None):
    out = model.forward(prepare(model, batch.inputs))
    terms, ws, parts = [], [], {}
    for task, w in weights.items():
        if w == 0 or _masked_empty(task, batch):
            continue
        loss = task_loss(task, out[task], batch, class_weights)
        terms.append(loss)
        ws.append(w)
        parts[task] = float(loss.data)
    if not terms:
        return None, parts
    total = ad.weighted_sum(terms, ws)
    opt.zero_grad()
    ad.backward(total)
    opt.step()
    return float(total.data), parts


def evaluate_losses(model, data, batch_size=8):
    """Per-task mean loss over ``data`` (frame-weighted)."""
    sums, counts = {}, {}
    with ad.no_grad():
        for start in range(0, len(data), batch_size):
            batch = data.subset(slice(start, start + batch_size))
            out = model.forward(prepare(model, batch.inputs))
            for task in model.config.outputs:
                if _masked_empty(task, batch):
                    continue
                n = len(batch)
                sums[task] = sums.get(task, 0.0) + float(task_loss(task, out[task], batch).data) * n
                counts[task] = counts.get(task, 0) + n
    return {t: sums[t] / counts[t] for t in sums}


def train(model, data, cfg=None, val_data=None, log=None):
    """Minimise sum_task lambda_task * loss_task with Adam.

    Returns the loss trace: one dict per epoch with the mean training loss
    per task and in total, plus validation losses when ``val_data`` is
    given. ``log`` is called with each row."""
    cfg = cfg or TrainConfig()
    weights = _weights(model, cfg)
    data.require([t for t, w in weights.items() if w > 0])
    n = len(data)
    if n == 0:
        raise ShapeError("training data is empty")
    h, w = data.size
    crop = cfg.crop if cfg.crop and cfg.crop < min(h, w) else 0
    if crop and crop % 2 ** (model.config.scales - 1):
        raise ConfigError(f"crop {crop} is not divisible by 2^(scales-1)")
    bs = min(cfg.batch_size, n)
    steps = cfg.steps_per_epoch or math.ceil(n / bs)
    cw = None
    if cfg.class_balance and weights.get("segmentation", 0) > 0:
        cw = class_balance_weights(data.labels, model.config.class_count)
    rng = make_rng(cfg.seed, 11)
    opt = ad.Adam(model.parameters(), lr=cfg.lr)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        totals, parts_sum, counted = 0.0, {}, 0
        for step in range(steps):
            idx = order[(np.arange(bs) + step * bs) % n]
            if crop:
                ys = rng.integers(0, h - crop + 1, size=bs)
                xs = rng.integers(0, w - crop + 1, size=bs)
                batch = data.crop(idx, ys, xs, crop)
            else:
                batch = data.subset(idx)
            try:
                with check_finite():
                    total, parts = train_step(model, opt, batch, weights, cw)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch} step {step}: {exc}") from exc
            if total is None:
                continue
            totals += total
            counted += 1
            for k, v in parts.items():
                parts_sum[k] = parts_sum.get(k, 0.0) + v
        row = {"epoch": epoch, "loss": totals / max(counted, 1)}
        row.update({f"train_{k}": v / max(counted, 1) for k, v in parts_sum.items()})
        if val_data is not None and len(val_data):
            row.update({f"val_{k}": v for k, v in evaluate_losses(model, val_data).items()})
        trace.append(row)
        if log is not None:
            log(row)
    return trace


def predict(model, data, batch_size=8):
    """Channels-last predictions over all frames of ``data``."""
    outs = {}
    for start in range(0, len(data), batch_size):
        part = infer(model, data.subset(slice(start, start + batch_size)).inputs)
        for t, v in part.items():
            outs.setdefault(t, []).append(v)
    return {t: np.concatenate(v) for t, v in outs.items()}


def trace_to_csv(trace):
    keys = []
    for row in trace:
        keys += [k for k in row if k not in keys]
    lines = [",".join(keys)]
    for row in trace:
        lines.append(",".join("" if k not in row else (str(row[k]) if k == "epoch" else repr(float(row[k])))
                              for k in keys))
    return "\n".join(lines) + "\n"
