"""Central finite-difference gradient checks in float64.

The error of one check is ||g_analytic - g_numeric|| / max(||g_analytic|| +
||g_numeric||, 1e-12) over the checked entries; an op's error is the max
over its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor, backward, float64_mode, make_node

STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    rel_error: float
    checked: int

    def passed(self, tol):
        return self.rel_error < tol


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def check(fn, inputs, rng, name="fn", max_entries=None, step=STEP):
    """Compare backprop against central differences of ``fn``.

    ``fn(*tensors)`` returns a Tensor; non-scalar outputs are reduced with a
    fixed random projection. ``inputs`` are float arrays; with
    ``max_entries`` only a random subset of each input's entries is probed."""
    with float64_mode():
        arrays = [np.array(a, dtype=np.float64) for a in inputs]
        proj = {}

        def scalar(*ts):
            out = fn(*ts)
            if out.data.size == 1:
                return out
            if "r" not in proj:
                proj["r"] = rng.standard_normal(out.data.shape)
            return _project(out, proj["r"])

        tensors = [Tensor(a, requires_grad=True) for a in arrays]
        backward(scalar(*tensors))
        worst, total = 0.0, 0
        for k, (a, t) in enumerate(zip(arrays, tensors)):
            analytic = t.grad if t.grad is not None else np.zeros_like(a)
            flat = np.arange(a.size)
            if max_entries is not None and a.size > max_entries:
                flat = rng.choice(a.size, size=max_entries, replace=False)
            numeric = np.empty(len(flat))
            for n, idx in enumerate(flat):
                pos = np.unravel_index(idx, a.shape)
                orig = a[pos]
                a[pos] = orig + step
                fp = float(scalar(*[Tensor(x) for x in arrays]).data)
                a[pos] = orig - step
                fm = float(scalar(*[Tensor(x) for x in arrays]).data)
                a[pos] = orig
                numeric[n] = (fp - fm) / (2 * step)
            worst = max(worst, relative_error(analytic.ravel()[flat], numeric))
            total += len(flat)
        return CheckResult(name, worst, total)


def _project(out, r):
    val = np.asarray(np.sum(out.data * r))
    return make_node(val, (out,), lambda g: (g * r,), "project")


def _away_from_zero(a, margin=0.05):
    """Push entries away from the relu kink so differences are smooth."""
    return np.where(np.abs(a) < margin, np.sign(a + 1e-12) * margin + a, a)


def op_suite(seed=0):
    """(name, fn, inputs) triples covering every differentiable op."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 6, 6))
    w3 = rng.standard_normal((4, 3, 3, 3))
    b4 = rng.standard_normal(4)
    w1 = rng.standard_normal((2, 3, 1, 1))
    labels = rng.integers(0, 4, size=(2, 5, 5))
    ignore = rng.random((2, 5, 5)) < 0.2
    gt_flow = rng.standard_normal((2, 2, 5, 5))
    valid = rng.random((2, 5, 5)) < 0.8
    gt_n = rng.standard_normal((2, 3, 5, 5))
    gt_n /= np.linalg.norm(gt_n, axis=1, keepdims=True)
    cw = rng.uniform(0.5, 2.0, size=4)
    return [
        ("add", lambda a, b: ops.add(a, b), [x, rng.standard_normal(x.shape)]),
        ("mul_scalar", lambda a: ops.mul_scalar(a, -1.7), [x]),
        ("weighted_sum", lambda a, b: ops.weighted_sum([a, b], [0.3, 2.0]),
         [rng.standard_normal(()), rng.standard_normal(())]),
        ("conv2d_same", lambda a, w, b: ops.conv2d(a, w, b), [x, w3, b4]),
        ("conv2d_1x1", lambda a, w: ops.conv2d(a, w), [x, w1]),
        ("conv2d_stride2", lambda a, w, b: ops.conv2d(a, w, b, stride=2, padding=0),
         [rng.standard_normal((1, 3, 7, 7)), w3, b4]),
        ("relu", ops.relu, [_away_from_zero(x)]),
        ("concat", lambda a, b: ops.concat_channels([a, b]), [x, rng.standard_normal((2, 2, 6, 6))]),
        ("split", lambda a: ops.split_channels(a, [1, 2])[1], [x]),
        ("crop", lambda a: ops.crop(a, 4, 5), [x]),
        ("upsample_x2", lambda a: ops.upsample_bilinear(a, 2), [x]),
        ("upsample_x4", lambda a: ops.upsample_bilinear(a, 4), [rng.standard_normal((1, 2, 3, 3))]),
        ("downsample_x2", lambda a: ops.downsample_avg(a, 2), [x]),
        ("normalize", ops.normalize_channels, [x]),
        ("softmax_ce", lambda z: ops.softmax_cross_entropy(z, labels, ignore),
         [rng.standard_normal((2, 4, 5, 5))]),
        ("softmax_ce_weighted", lambda z: ops.softmax_cross_entropy(z, labels, ignore, cw),
         [rng.standard_normal((2, 4, 5, 5))]),
        ("epe_loss", lambda p: ops.epe_loss(p, gt_flow, valid), [rng.standard_normal((2, 2, 5, 5))]),
        ("cosine_loss", lambda p: ops.cosine_normal_loss(p, gt_n, valid),
         [rng.standard_normal((2, 3, 5, 5))]),
    ]


def check_ops(seed=0):
    rng = np.random.default_rng(seed + 1)
    return [check(fn, inputs, rng, name) for name, fn, inputs in op_suite(seed)]


def check_model(seed=0, size=16, max_entries=6, class_count=4):
    """Full refinement model (all three tasks, tight coupling) on a
    ``size`` x ``size`` input; the loss is the sum of the three task losses.

    Heads are randomised so every path carries gradient. Returns one result
    per parameter tensor (sampled entries)."""
    from ..refinenet import RefineConfig, RefineModel
    from ..refinenet.model import prepare

    rng = np.random.default_rng(seed)
    with float64_mode():
        cfg = RefineConfig(inputs=("flow", "segmentation", "normals"),
                           outputs=("flow", "segmentation", "normals"), coupling="tight",
                           scales=3, branch_channels=3, trunk_channels=4, class_count=class_count)
        model = RefineModel(cfg, seed=seed)
        for name, p in model.params.items():
            if name.startswith("head."):
                p.data[...] = rng.standard_normal(p.data.shape) * 0.3
            elif name.endswith(".bias"):
                p.data[...] = rng.standard_normal(p.data.shape) * 0.1
        flow = rng.standard_normal((1, size, size, 2)) * 2
        scores = rng.random((1, size, size, class_count))
        scores /= scores.sum(-1, keepdims=True)
        normals = rng.standard_normal((1, size, size, 3))
        normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
        pyr = prepare(model, {"flow": flow, "segmentation": scores, "normals": normals})
        gt_flow = np.moveaxis(flow, -1, 1) + rng.standard_normal((1, 2, size, size))
        labels = rng.integers(0, class_count, size=(1, size, size))
        gt_n = np.moveaxis(normals, -1, 1)[:, [1, 2, 0]]

        names = list(model.params)

        def loss(*ts):
            saved = {n: model.params[n] for n in names}
            for n, t in zip(names, ts):
                model.params[n] = t
            try:
                out = model.forward(pyr)
                return ops.weighted_sum([ops.epe_loss(out["flow"], gt_flow),
                                         ops.softmax_cross_entropy(out["segmentation"], labels),
                                         ops.cosine_normal_loss(out["normals"], gt_n)], [1.0, 1.0, 1.0])
            finally:
                model.params.update(saved)

        arrays = [model.params[n].data for n in names]
        res = check(loss, arrays, rng, "refine_model", max_entries=max_entries)
        return res
