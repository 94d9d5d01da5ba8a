"""Momentum SGD."""

import numpy as np

from ..errors import ShapeError


class SGD:
    """Heavy-ball SGD: ``v = m*v - lr*(g + decay*p); p += v``.

    Velocity buffers are created lazily, one per parameter, and updates are
    applied in place so layers keep seeing the same arrays.
    """

    def __init__(self, momentum=0.9, weight_decay=5e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = None

    def step(self, params, grads, lr):
        if len(params) != len(grads):
            raise ShapeError("gradient list does not match parameter list")
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.velocity):
            if p.shape != g.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            v *= self.momentum
            v -= lr * (g + self.weight_decay * p)
            p += v


def sgd_step(model, grads, lr, momentum=0.0, weight_decay=0.0, optimizer=None):
    """One update of ``model`` in place; pass ``optimizer`` to keep momentum state."""
    opt = optimizer if optimizer is not None else SGD(momentum, weight_decay)
    opt.step(model.params, grads, lr)
    return model
