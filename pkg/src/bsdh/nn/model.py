"""Layer stack producing weighted relaxed hash codes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError, ShapeError, StateError
from .layers import (
    AvgPool2D,
    Conv2D,
    ElementwiseWeight,
    FullyConnected,
    ReLU,
    TanhLike,
)

LAYER_KINDS = ("conv2d", "avgpool2d", "fully_connected", "relu", "tanh_like", "elementwise_weight")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = 0
    units: int = 0
    size: int = 0
    stride: int = 1

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1:
            raise ShapeError("stride must be >= 1")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "conv2d":
            d.update(filters=self.filters, size=self.size, stride=self.stride)
        elif self.kind == "avgpool2d":
            d.update(size=self.size, stride=self.stride)
        elif self.kind == "fully_connected":
            d.update(units=self.units)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def conv(filters, size=5, stride=2):
    return LayerSpec("conv2d", filters=filters, size=size, stride=stride)


def pool(size=2, stride=1):
    return LayerSpec("avgpool2d", size=size, stride=stride)


def fc(units):
    return LayerSpec("fully_connected", units=units)


def relu():
    return LayerSpec("relu")


def hash_head(q):
    return [fc(q), LayerSpec("tanh_like"), LayerSpec("elementwise_weight")]


def preset(name, q, width=1.0):
    """Layer specs for one of the named architectures.

    ``paper``: three conv(5x5, stride 2)+ReLU+avgpool(2x2, stride 1) blocks
    with 32/64/128 filters, FC512, then the hash head.  Needs inputs of at
    least 43x43 because no padding is used.
    ``desk``: one conv16 block, FC128, hash head.
    ``mlp``: FC256, hash head (for feature vectors).

    ``width`` scales filter and unit counts, e.g. for cheap gradient checks.
    """

    def n(x):
        return max(1, int(round(x * width)))

    if name == "paper":
        body = []
        for f in (32, 64, 128):
            body += [conv(n(f)), relu(), pool()]
        body += [fc(n(512)), relu()]
    elif name == "desk":
        body = [conv(n(16)), relu(), pool(), fc(n(128)), relu()]
    elif name == "mlp":
        body = [fc(n(256)), relu()]
    else:
        raise ShapeError(f"unknown preset {name!r}; choose paper, desk or mlp")
    return body + hash_head(q)


@dataclass
class ForwardCache:
    model_token: int
    batch: int
    records: list = field(default_factory=list)


class Model:
    """Ordered layer stack whose last three layers form the hash head.

    ``forward`` returns rows ``o(phi(I_j)) * |w|``; ``features`` returns the
    pre-activation ``phi(I_j)`` whose sign is the binary code.
    """

    def __init__(self, specs, input_shape, beta=2.0, seed=0):
        specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in specs]
        kinds = [s.kind for s in specs]
        if kinds[-3:] != ["fully_connected", "tanh_like", "elementwise_weight"]:
            raise ShapeError("a model must end with fully_connected, tanh_like, elementwise_weight")
        self.specs = specs
        self.input_shape = tuple(int(d) for d in input_shape)
        self.iteration = 0
        rng = np.random.default_rng(seed)
        self.layers = []
        shape = self.input_shape
        for s in specs:
            if s.kind == "conv2d":
                if len(shape) != 3:
                    raise ShapeError(f"conv2d needs a (channels, h, w) input, got {shape}")
                layer = Conv2D(shape[0], s.filters, s.size, s.stride, rng=rng)
            elif s.kind == "avgpool2d":
                if len(shape) != 3:
                    raise ShapeError(f"avgpool2d needs a (channels, h, w) input, got {shape}")
                layer = AvgPool2D(s.size, s.stride)
            elif s.kind == "fully_connected":
                layer = FullyConnected(int(np.prod(shape)), s.units, rng=rng)
            elif s.kind == "relu":
                layer = ReLU()
            elif s.kind == "tanh_like":
                layer = TanhLike(beta)
            else:
                layer = ElementwiseWeight(shape[0])
            shape = layer.output_shape(shape)
            self.layers.append(layer)
        self.beta = beta

    @property
    def code_length(self):
        return self.layers[-1].weight.shape[0]

    @property
    def bit_weights(self):
        return self.layers[-1].weight

    @property
    def beta(self):
        return self.layers[-2].beta

    @beta.setter
    def beta(self, value):
        if value < 2:
            raise ValueError(f"beta must be >= 2, got {value}")
        self.layers[-2].beta = float(value)

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"expected inputs of shape (batch, {self.input_shape}), got {x.shape}")
        for p in self.params:
            if not np.all(np.isfinite(p)):
                raise NumericError("model has non-finite parameters")
        return x

    def forward(self, x):
        x = self._check_input(x)
        cache = ForwardCache(id(self), x.shape[0])
        for layer in self.layers:
            x, rec = layer.forward(x)
            cache.records.append(rec)
        return x, cache

    def backward(self, cache, output_grad):
        """Parameter gradients of ``sum(output * output_grad)``."""
        if not isinstance(cache, ForwardCache) or cache.model_token != id(self) \
                or len(cache.records) != len(self.layers):
            raise StateError("cache was not produced by this model's forward")
        grad = np.asarray(output_grad, dtype=np.float64)
        if grad.shape != (cache.batch, self.code_length):
            raise ShapeError(f"output_grad must have shape {(cache.batch, self.code_length)}")
        grads = []
        for layer, rec in zip(reversed(self.layers), reversed(cache.records)):
            grad, pg = layer.backward(grad, rec)
            grads.append(pg)
        return [g for pg in reversed(grads) for g in pg]

    def features(self, x):
        """Pre-activation of the tanh-like layer, shape (batch, q)."""
        x = self._check_input(x)
        for layer in self.layers[:-2]:
            x, _ = layer.forward(x)
        return x

    def header(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [s.to_dict() for s in self.specs],
            "code_length": int(self.code_length),
            "beta": float(self.beta),
            "iteration": int(self.iteration),
        }


def build_model(name, q, input_shape, seed=0, beta=2.0, width=1.0):
    return Model(preset(name, q, width=width), input_shape, beta=beta, seed=seed)
