import numpy as np

from ..errors import DivergenceError


class Adam:
    """Bias-corrected Adam over a list of :class:`Parameter`."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient for parameter {p.name!r} at step {self.t}")
            p.data[...] = adam_update(p.data, g, self.m[p.name], self.v[p.name], self.t,
                                      self.lr, self.beta1, self.beta2, self.eps)


def adam_update(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam step; updates moment buffers ``m`` and ``v`` in place and
    returns the new parameter values."""
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad * grad
    mhat = m / (1 - beta1 ** t)
    vhat = v / (1 - beta2 ** t)
    return (param - lr * mhat / (np.sqrt(vhat) + eps)).astype(param.dtype)
