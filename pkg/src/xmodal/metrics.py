"""Evaluation metrics: endpoint error, mean IoU, angular normal statistics.

Aggregation pools pixels over the whole dataset: EPE is pixel-weighted,
segmentation sums one confusion matrix, normal statistics (median
included) are recomputed over the pooled angle distribution. Sums use
exactly rounded arithmetic or sorted inputs so results do not depend on
frame order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError, ValidationError

NORMAL_THRESHOLDS = (11.25, 22.5, 30.0)
NORM_TOLERANCE = 1e-3


@dataclass
class FlowMetric:
    epe: float
    pixel_count: int
    epe_sum: float = field(default=0.0, repr=False)


@dataclass
class SegMetric:
    iou: np.ndarray  # per class, percent; NaN for zero-union classes
    miou: float
    confusion: np.ndarray  # rows = ground truth, columns = prediction


@dataclass
class NormalMetric:
    mean: float
    median: float
    rmse: float
    pct_11_25: float
    pct_22_5: float
    pct_30: float
    angles: np.ndarray = field(repr=False, default=None)

    def as_row(self):
        return [self.mean, self.median, self.rmse, self.pct_11_25, self.pct_22_5, self.pct_30]


def eval_flow(pred, gt, valid_mask=None):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValidationError(f"flow shapes differ: {pred.shape} vs {gt.shape}")
    if valid_mask is None:
        valid_mask = np.ones(gt.shape[:-1], dtype=bool)
    valid_mask = np.asarray(valid_mask, dtype=bool)
    n = int(valid_mask.sum())
    if n == 0:
        raise EvaluationError("eval_flow: empty valid mask")
    d = pred[valid_mask] - gt[valid_mask]
    err = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)
    total = math.fsum(err)
    return FlowMetric(total / n, n, total)


def confusion_matrix(pred, gt, class_count, ignore_label=None):
    pred = np.asarray(pred).astype(np.int64).ravel()
    gt = np.asarray(gt).astype(np.int64).ravel()
    keep = np.ones_like(gt, dtype=bool) if ignore_label is None else gt != ignore_label
    if not keep.any():
        raise EvaluationError("eval_seg: every pixel is ignored")
    g, p = gt[keep], pred[keep]
    if g.min() < 0 or g.max() >= class_count or p.min() < 0 or p.max() >= class_count:
        raise ValidationError("labels outside 0..class_count-1")
    return np.bincount(g * class_count + p, minlength=class_count ** 2).reshape(class_count, class_count)


def seg_from_confusion(conf):
    conf = np.asarray(conf, dtype=np.int64)
    tp = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - np.diag(conf)
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, 100.0 * tp / union, np.nan)
    present = union > 0
    miou = math.fsum(iou[present]) / int(present.sum()) if present.any() else float("nan")
    return SegMetric(iou, miou, conf)


def eval_seg(pred, gt, class_count, ignore_label=None):
    """``pred`` is a label map or an (H, W, C) score map (argmax taken)."""
    pred = np.asarray(pred)
    if pred.ndim == np.ndim(gt) + 1:
        pred = np.argmax(pred, axis=-1)
    if pred.shape != np.shape(gt):
        raise ValidationError(f"label shapes differ: {pred.shape} vs {np.shape(gt)}")
    return seg_from_confusion(confusion_matrix(pred, gt, class_count, ignore_label))


def angular_errors(pred, gt, valid_mask=None):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValidationError(f"normal shapes differ: {pred.shape} vs {gt.shape}")
    if valid_mask is None:
        valid_mask = np.ones(gt.shape[:-1], dtype=bool)
    valid_mask = np.asarray(valid_mask, dtype=bool)
    if not valid_mask.any():
        raise EvaluationError("eval_normals: empty valid mask")
    p, g = pred[valid_mask], gt[valid_mask]
    for name, v in (("prediction", p), ("ground truth", g)):
        norm = np.linalg.norm(v, axis=-1)
        worst = float(np.max(np.abs(norm - 1.0)))
        if worst > NORM_TOLERANCE:
            raise ValidationError(f"{name} normals deviate from unit length by {worst:.2e}")
    p = p / np.linalg.norm(p, axis=-1, keepdims=True)
    g = g / np.linalg.norm(g, axis=-1, keepdims=True)
    cos = np.clip(np.sum(p * g, axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def normal_stats(angles):
    """Six statistics over a 1-D array of angles (degrees). Thresholds are
    strict (<); even-count medians take the lower middle value."""
    a = np.sort(np.asarray(angles, dtype=np.float64))
    n = len(a)
    if n == 0:
        raise EvaluationError("no valid normals")
    mean = math.fsum(a) / n
    median = float(a[(n - 1) // 2])
    rmse = math.sqrt(math.fsum(a * a) / n)
    pct = [100.0 * int(np.count_nonzero(a < t)) / n for t in NORMAL_THRESHOLDS]
    return NormalMetric(mean, median, rmse, *pct, angles=a)


def eval_normals(pred, gt, valid_mask=None):
    return normal_stats(angular_errors(pred, gt, valid_mask))


def aggregate(metrics):
    """Dataset-level metric from per-frame metrics of one kind."""
    metrics = list(metrics)
    if not metrics:
        raise EvaluationError("aggregate: empty metric list")
    first = metrics[0]
    if isinstance(first, FlowMetric):
        n = sum(m.pixel_count for m in metrics)
        return FlowMetric(math.fsum(m.epe_sum for m in metrics) / n, n,
                          math.fsum(m.epe_sum for m in metrics))
    if isinstance(first, SegMetric):
        conf = np.sum([m.confusion for m in metrics], axis=0)
        return seg_from_confusion(conf)
    if isinstance(first, NormalMetric):
        return normal_stats(np.concatenate([m.angles for m in metrics]))
    raise TypeError(f"cannot aggregate {type(first).__name__}")
