"""Layer implementations with explicit forward/backward passes.

Every layer works on float64 batches whose first axis is the batch.  Image
layers expect ``(batch, channels, height, width)``.  ``forward`` returns the
output together with whatever the layer needs to run ``backward`` later;
``backward`` returns the gradient w.r.t. the input and a list of gradients
aligned with ``params``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError

_ONE_BELOW = np.nextafter(1.0, 0.0)


def tanh_like(v, beta):
    """Smooth sign surrogate ``(1 - exp(-beta v)) / (1 + exp(-beta v))``.

    Evaluated branchwise so the exponential argument is never positive.
    Results are kept strictly inside (-1, 1) even when the exponential
    underflows.
    """
    x = beta * np.asarray(v, dtype=np.float64)
    with np.errstate(under="ignore"):
        e = np.exp(-np.abs(x))
        out = np.sign(x) * (-np.expm1(-np.abs(x))) / (1.0 + e)
    return np.clip(out, -_ONE_BELOW, _ONE_BELOW)


def tanh_like_grad(v, beta):
    o = tanh_like(v, beta)
    return 0.5 * beta * (1.0 - o * o)


def conv_output_size(size, kernel, stride):
    return (size - kernel) // stride + 1


class Layer:
    kind = "layer"
    params: list[np.ndarray]

    def __init__(self):
        self.params = []

    def output_shape(self, input_shape):
        return input_shape

    def spec(self) -> dict:
        return {"kind": self.kind}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad, cache):
        raise NotImplementedError


class Conv2D(Layer):
    """Valid (unpadded) 2-D convolution."""

    kind = "conv2d"

    def __init__(self, in_channels, filters, size, stride=1, rng=None):
        super().__init__()
        if size < 1 or stride < 1 or filters < 1:
            raise ShapeError("conv2d sizes and stride must be >= 1")
        self.in_channels = in_channels
        self.filters = filters
        self.size = size
        self.stride = stride
        rng = np.random.default_rng(rng)
        fan_in = in_channels * size * size
        fan_out = filters * size * size
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        self.weight = rng.uniform(-bound, bound, (filters, in_channels, size, size))
        self.bias = np.zeros(filters)
        self.params = [self.weight, self.bias]

    def spec(self):
        return {"kind": self.kind, "filters": self.filters, "size": self.size, "stride": self.stride}

    def output_shape(self, input_shape):
        c, h, w = input_shape
        if c != self.in_channels:
            raise ShapeError(f"conv2d expects {self.in_channels} channels, got {c}")
        oh = conv_output_size(h, self.size, self.stride)
        ow = conv_output_size(w, self.size, self.stride)
        if oh < 1 or ow < 1:
            raise ShapeError(f"conv2d {self.size}x{self.size}/{self.stride} does not fit a {h}x{w} input")
        return (self.filters, oh, ow)

    def forward(self, x):
        s, k = self.stride, self.size
        # (n, c, oh, ow, k, k)
        windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        out = np.tensordot(windows, self.weight, axes=([1, 4, 5], [1, 2, 3]))
        out = out.transpose(0, 3, 1, 2) + self.bias[None, :, None, None]
        return np.ascontiguousarray(out), (x.shape, windows)

    def backward(self, grad, cache):
        x_shape, windows = cache
        s, k = self.stride, self.size
        oh, ow = grad.shape[2], grad.shape[3]
        dw = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
        db = grad.sum(axis=(0, 2, 3))
        dx = np.zeros(x_shape)
        for i in range(k):
            for j in range(k):
                contrib = np.einsum("nohw,oc->nchw", grad, self.weight[:, :, i, j])
                dx[:, :, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s] += contrib
        return dx, [dw, db]


class AvgPool2D(Layer):
    kind = "avgpool2d"

    def __init__(self, size=2, stride=1):
        super().__init__()
        if size < 1 or stride < 1:
            raise ShapeError("avgpool2d size and stride must be >= 1")
        self.size = size
        self.stride = stride

    def spec(self):
        return {"kind": self.kind, "size": self.size, "stride": self.stride}

    def output_shape(self, input_shape):
        c, h, w = input_shape
        oh = conv_output_size(h, self.size, self.stride)
        ow = conv_output_size(w, self.size, self.stride)
        if oh < 1 or ow < 1:
            raise ShapeError(f"avgpool2d {self.size}x{self.size}/{self.stride} does not fit a {h}x{w} input")
        return (c, oh, ow)

    def forward(self, x):
        s, k = self.stride, self.size
        windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        return windows.mean(axis=(4, 5)), x.shape

    def backward(self, grad, x_shape):
        s, k = self.stride, self.size
        oh, ow = grad.shape[2], grad.shape[3]
        g = grad / (k * k)
        dx = np.zeros(x_shape)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s] += g
        return dx, []


class FullyConnected(Layer):
    """Affine layer; flattens any trailing dimensions of its input."""

    kind = "fully_connected"

    def __init__(self, in_features, units, rng=None):
        super().__init__()
        if units < 1:
            raise ShapeError("fully_connected needs at least one unit")
        self.in_features = in_features
        self.units = units
        rng = np.random.default_rng(rng)
        bound = np.sqrt(6.0 / (in_features + units))
        self.weight = rng.uniform(-bound, bound, (in_features, units))
        self.bias = np.zeros(units)
        self.params = [self.weight, self.bias]

    def spec(self):
        return {"kind": self.kind, "units": self.units}

    def output_shape(self, input_shape):
        if int(np.prod(input_shape)) != self.in_features:
            raise ShapeError(f"fully_connected expects {self.in_features} inputs, got {input_shape}")
        return (self.units,)

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        return flat @ self.weight + self.bias, (x.shape, flat)

    def backward(self, grad, cache):
        x_shape, flat = cache
        dw = flat.T @ grad
        db = grad.sum(axis=0)
        dx = (grad @ self.weight.T).reshape(x_shape)
        return dx, [dw, db]


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, grad, mask):
        return grad * mask, []


class TanhLike(Layer):
    kind = "tanh_like"

    def __init__(self, beta=2.0):
        super().__init__()
        self.beta = float(beta)

    def forward(self, x):
        out = tanh_like(x, self.beta)
        return out, (out, self.beta)

    def backward(self, grad, cache):
        out, beta = cache
        return grad * (0.5 * beta * (1.0 - out * out)), []


class ElementwiseWeight(Layer):
    """Scales each code bit by ``|w_i|``; ``w`` is stored unconstrained."""

    kind = "elementwise_weight"

    def __init__(self, q):
        super().__init__()
        self.weight = np.ones(q)
        self.params = [self.weight]

    def forward(self, x):
        return x * np.abs(self.weight), x

    def backward(self, grad, x):
        dw = (grad * x).sum(axis=0) * np.sign(self.weight)
        return grad * np.abs(self.weight), [dw]
