"""Differentiable ops. Feature maps are NCHW; every op has an exact backward."""
from __future__ import annotations

import functools

import numpy as np

from ..errors import ConfigError, ShapeError, UndefinedLossError
from .tensor import Tensor, make_node


def _t(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b):
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul_scalar(a, s):
    a = _t(a)
    return make_node(a.data * s, (a,), lambda g: (g * s,), "mul_scalar")


def weighted_sum(terms, weights):
    """sum_i w_i * t_i for scalar tensors."""
    terms = [_t(t) for t in terms]
    data = sum(float(w) * t.data for t, w in zip(terms, weights))
    data = np.asarray(data, dtype=terms[0].data.dtype)
    return make_node(data, tuple(terms), lambda g: tuple(g * w for w in weights), "weighted_sum")


# ---------------------------------------------------------------------------
# convolution


def conv_output_size(n, k, stride, padding):
    span = n + 2 * padding - k
    if span < 0 or span % stride:
        raise ConfigError(
            f"conv2d: ({n} + 2*{padding} - {k}) is not divisible by stride {stride}")
    return span // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding="same"):
    """Cross-correlation of ``x`` (N,Cin,H,W) with ``weight`` (Cout,Cin,k,k)."""
    x, weight = _t(x), _t(weight)
    if bias is not None:
        bias = _t(bias)
    n, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin or k != k2:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    if k % 2 != 1:
        raise ConfigError(f"conv2d: kernel size must be odd, got {k}")
    if padding == "same":
        if stride != 1:
            raise ConfigError("conv2d: 'same' padding requires stride 1")
        padding = (k - 1) // 2
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    # im2col: (N, Cin*k*k, Ho*Wo)
    cols = np.empty((n, cin, k, k, ho, wo), dtype=x.data.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(n, cin * k * k, ho * wo)
    wmat = weight.data.reshape(cout, cin * k * k)
    out = np.matmul(wmat, cols).reshape(n, cout, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward_fn(g):
        g2 = g.reshape(n, cout, ho * wo)
        gw = np.einsum("nop,nkp->ok", g2, cols).reshape(weight.shape)
        gcols = np.matmul(wmat.T, g2).reshape(n, cin, k, k, ho, wo)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_node(out, parents, backward_fn, "conv2d")


# ---------------------------------------------------------------------------
# pointwise / structural


def relu(x):
    x = _t(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0).astype(x.data.dtype), (x,),
                     lambda g: (g * mask,), "relu")


def concat_channels(xs):
    xs = [_t(x) for x in xs]
    ref = xs[0].shape
    for x in xs[1:]:
        if x.data.ndim != 4 or (x.shape[0], x.shape[2], x.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"concat_channels: {x.shape} does not match {ref} on N,H,W")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])
    out = np.concatenate([x.data for x in xs], axis=1)

    def backward_fn(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return make_node(out, tuple(xs), backward_fn, "concat")


def split_channels(x, sizes):
    """Inverse of concat; returns a list of tensors."""
    x = _t(x)
    bounds = np.cumsum([0] + list(sizes))
    if bounds[-1] != x.shape[1]:
        raise ShapeError(f"split_channels: sizes {sizes} do not sum to {x.shape[1]}")
    outs = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        def backward_fn(g, a=a, b=b):
            full = np.zeros_like(x.data)
            full[:, a:b] = g
            return (full,)
        outs.append(make_node(x.data[:, a:b].copy(), (x,), backward_fn, "split"))
    return outs


def crop(x, h, w):
    """Keep the top-left ``h`` x ``w`` window (undoes bottom/right padding)."""
    x = _t(x)

    def backward_fn(g):
        full = np.zeros_like(x.data)
        full[:, :, :h, :w] = g
        return (full,)

    return make_node(x.data[:, :, :h, :w].copy(), (x,), backward_fn, "crop")


def _check_factor(factor):
    if factor < 1 or factor & (factor - 1):
        raise ConfigError(f"resampling factor must be a power of two, got {factor}")


@functools.lru_cache(maxsize=64)
def upsample_matrix(n, factor):
    """(n*factor, n) bilinear interpolation matrix, align_corners=False."""
    m = n * factor
    src = (np.arange(m) + 0.5) / factor - 0.5
    src = np.clip(src, 0, n - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    U = np.zeros((m, n))
    U[np.arange(m), i0] += 1 - frac
    U[np.arange(m), i1] += frac
    return U


def upsample_array(a, factor):
    """Bilinear upsampling of the last two axes of a plain array."""
    if factor == 1:
        return a.copy()
    h, w = a.shape[-2:]
    Uh = upsample_matrix(h, factor).astype(a.dtype)
    Uw = upsample_matrix(w, factor).astype(a.dtype)
    return np.matmul(np.matmul(Uh, a), Uw.T)


def downsample_array(a, factor):
    if factor == 1:
        return a.copy()
    h, w = a.shape[-2:]
    if h % factor or w % factor:
        raise ShapeError(f"downsample: {h}x{w} not divisible by {factor}")
    lead = a.shape[:-2]
    return a.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


def upsample_bilinear(x, factor):
    x = _t(x)
    _check_factor(factor)
    if factor == 1:
        return make_node(x.data.copy(), (x,), lambda g: (g,), "upsample")
    h, w = x.shape[2:]
    Uh = upsample_matrix(h, factor).astype(x.data.dtype)
    Uw = upsample_matrix(w, factor).astype(x.data.dtype)
    out = np.matmul(np.matmul(Uh, x.data), Uw.T)

    def backward_fn(g):
        return (np.matmul(np.matmul(Uh.T, g), Uw),)

    return make_node(out, (x,), backward_fn, "upsample")


def downsample_avg(x, factor):
    x = _t(x)
    _check_factor(factor)
    out = downsample_array(x.data, factor)

    def backward_fn(g):
        up = np.repeat(np.repeat(g, factor, axis=2), factor, axis=3)
        return (up / (factor * factor),)

    return make_node(out, (x,), backward_fn, "downsample")


def normalize_channels(x, eps=1e-12):
    """x / sqrt(|x|^2 + eps) over the channel axis."""
    x = _t(x)
    norm = np.sqrt(np.sum(x.data * x.data, axis=1, keepdims=True) + eps)
    y = x.data / norm

    def backward_fn(g):
        dot = np.sum(g * y, axis=1, keepdims=True)
        return ((g - y * dot) / norm,)

    return make_node(y, (x,), backward_fn, "normalize")


# ---------------------------------------------------------------------------
# losses


def _mask_for(mask, n, h, w):
    if mask is None:
        return np.ones((n, h, w), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n, h, w):
        raise ShapeError(f"mask shape {mask.shape} != {(n, h, w)}")
    return mask


def softmax_cross_entropy(logits, target, ignore_mask=None, class_weights=None):
    """Mean over unmasked pixels of -log softmax(logits)[target].

    ``ignore_mask`` is True where a pixel is excluded. With ``class_weights``
    each pixel counts w[target] and the mean is taken over the total weight."""
    logits = _t(logits)
    n, c, h, w = logits.shape
    target = np.asarray(target)
    if target.shape != (n, h, w):
        raise ShapeError(f"target shape {target.shape} != {(n, h, w)}")
    keep = ~_mask_for(ignore_mask, n, h, w) if ignore_mask is not None else np.ones((n, h, w), bool)
    if not keep.any():
        raise UndefinedLossError("softmax_cross_entropy: every pixel is masked")
    if np.any(target[keep] >= c) or np.any(target[keep] < 0):
        raise ShapeError("softmax_cross_entropy: target label out of range")
    tgt = np.where(keep, target, 0).astype(np.int64)
    if class_weights is None:
        pw = keep.astype(np.float64)
    else:
        cw = np.asarray(class_weights, dtype=np.float64)
        if cw.shape != (c,) or np.any(cw < 0):
            raise ShapeError(f"class_weights must be {c} non-negative values")
        pw = np.where(keep, cw[tgt], 0.0)
    total = float(pw.sum())
    if total <= 0:
        raise UndefinedLossError("softmax_cross_entropy: zero total pixel weight")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    picked = np.take_along_axis(logp, tgt[:, None], axis=1)[:, 0]
    loss = -np.sum(picked * pw, dtype=np.float64) / total

    def backward_fn(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, tgt[:, None], 1.0, axis=1)
        grad = (p - onehot) * pw[:, None] / total
        return ((grad * g).astype(logits.data.dtype),)

    return make_node(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward_fn, "softmax_ce")


def epe_loss(pred, gt, valid_mask=None, eps=1e-6):
    """Mean over valid pixels of sqrt(du^2 + dv^2 + eps^2)."""
    pred = _t(pred)
    n, c, h, w = pred.shape
    gt = np.asarray(gt, dtype=pred.data.dtype)
    if c != 2 or gt.shape != pred.shape:
        raise ShapeError(f"epe_loss: pred {pred.shape}, gt {gt.shape}")
    valid = _mask_for(valid_mask, n, h, w)
    count = int(valid.sum())
    if count == 0:
        raise UndefinedLossError("epe_loss: empty valid mask")
    d = np.where(valid[:, None], pred.data - gt, 0)
    r = np.sqrt(np.sum(d * d, axis=1) + eps * eps)
    loss = np.sum(r[valid], dtype=np.float64) / count

    def backward_fn(g):
        grad = d / r[:, None] * valid[:, None] / count
        return ((grad * g).astype(pred.data.dtype),)

    return make_node(np.asarray(loss, dtype=pred.data.dtype), (pred,), backward_fn, "epe_loss")


def cosine_normal_loss(pred, gt, valid_mask=None, eps=1e-12):
    """Mean over valid pixels of 1 - <pred/|pred|, gt>."""
    pred = _t(pred)
    n, c, h, w = pred.shape
    gt = np.asarray(gt, dtype=pred.data.dtype)
    if c != 3 or gt.shape != pred.shape:
        raise ShapeError(f"cosine_normal_loss: pred {pred.shape}, gt {gt.shape}")
    valid = _mask_for(valid_mask, n, h, w)
    count = int(valid.sum())
    if count == 0:
        raise UndefinedLossError("cosine_normal_loss: empty valid mask")
    norm = np.sqrt(np.sum(pred.data * pred.data, axis=1, keepdims=True) + eps)
    u = pred.data / norm
    cos = np.sum(u * gt, axis=1)
    loss = np.sum(1.0 - cos[valid], dtype=np.float64) / count

    def backward_fn(g):
        # d(-<u,gt>)/dp = -(gt - u <u,gt>) / |p|
        grad = -(gt - u * cos[:, None]) / norm * valid[:, None] / count
        return ((grad * g).astype(pred.data.dtype),)

    return make_node(np.asarray(loss, dtype=pred.data.dtype), (pred,), backward_fn, "cosine_loss")
