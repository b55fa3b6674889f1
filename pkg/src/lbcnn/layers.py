"""Layers with manual backward passes.

Each layer keeps its learnable arrays in ``self.params`` and, after
``backward``, the matching gradients in ``self.grads``. ``forward`` caches
whatever ``backward`` needs; calling ``backward`` without a preceding
``forward`` raises :class:`StateError`.
"""

import numpy as np

from .conv import (SAME, conv2d_1x1, conv2d_1x1_backward, conv2d_dense, conv2d_dense_backward,
                   conv2d_sparse_binary, conv2d_sparse_binary_backward, im2col)
from .errors import ShapeError, StateError
from .tensor import as_tensor

ACTIVATIONS = ("relu", "sigmoid", "none")


def activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if kind == "none":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(kind, z, a, g):
    """Chain ``g`` (gradient w.r.t. the activation output) back to ``z``."""
    if kind == "relu":
        return np.where(z > 0, g, 0.0)
    if kind == "sigmoid":
        return g * a * (1.0 - a)
    return g


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    name = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.counter = None
        self._cache = None

    def _need_cache(self):
        if self._cache is None:
            raise StateError(f"{self.name}: backward called before forward")
        return self._cache

    def init_params(self, rng):
        pass

    def preactivations(self):
        """Pre-activation arrays of ReLU sites from the last forward (for kink checks)."""
        return []

    def clear(self):
        self._cache = None


class LbcLayer(Layer):
    """Fixed sparse binary convolution, activation, learnable 1x1 combination."""

    name = "lbc"

    def __init__(self, bank, q, act="relu", geom=SAME):
        super().__init__()
        if act not in ("relu", "sigmoid"):
            raise ValueError(f"LBC activation must be relu or sigmoid, got {act!r}")
        self.bank = bank
        self.act = act
        self.geom = geom
        self.q = q
        self.params["v"] = np.zeros((q, bank.m, 1, 1))

    @property
    def v(self):
        return self.params["v"]

    def init_params(self, rng):
        # each output sums m * nnz input values through +-1 weights, so that is the fan-in
        fan_in = self.bank.m * self.bank.nnz
        self.params["v"][...] = uniform_init(rng, self.v.shape, fan_in)

    def forward(self, x):
        z = conv2d_sparse_binary(x, self.bank, self.geom, self.counter)
        a = activate(self.act, z)
        self._cache = (x.shape, z, a)
        return conv2d_1x1(a, self.v, self.counter)

    def backward(self, grad_out, need_input_grad=True):
        x_shape, z, a = self._need_cache()
        grad_a, self.grads["v"] = conv2d_1x1_backward(a, self.v, grad_out, self.counter)
        if not need_input_grad:
            return None
        grad_z = activation_grad(self.act, z, a, grad_a)
        return conv2d_sparse_binary_backward(x_shape, self.bank, grad_z, self.geom, self.counter)

    def preactivations(self):
        return [self._cache[1]] if self._cache is not None and self.act == "relu" else []


class ConvLayer(Layer):
    """Learnable dense convolution, optionally followed by activation and a 1x1 mix."""

    name = "conv"

    def __init__(self, p, q, k, act="none", post=False, m=None, geom=SAME):
        super().__init__()
        self.act = act
        self.geom = geom
        self.post = post
        inner = (m or q) if post else q
        self.params["w"] = np.zeros((inner, p, k, k))
        if post:
            self.params["v"] = np.zeros((q, inner, 1, 1))

    def init_params(self, rng):
        w = self.params["w"]
        w[...] = uniform_init(rng, w.shape, np.prod(w.shape[1:]))
        if self.post:
            v = self.params["v"]
            v[...] = uniform_init(rng, v.shape, v.shape[1])

    def forward(self, x):
        w = self.params["w"]
        cols = im2col(x, w.shape[2], w.shape[3], self.geom)
        z = conv2d_dense(x, w, self.geom, self.counter, cols=cols)
        a = activate(self.act, z)
        self._cache = (x, cols, z, a)
        if self.post:
            return conv2d_1x1(a, self.params["v"], self.counter)
        return a

    def backward(self, grad_out, need_input_grad=True):
        x, cols, z, a = self._need_cache()
        g = grad_out
        if self.post:
            g, self.grads["v"] = conv2d_1x1_backward(a, self.params["v"], g, self.counter)
        g = activation_grad(self.act, z, a, g)
        grad_x, self.grads["w"] = conv2d_dense_backward(x, self.params["w"], g, self.geom, self.counter,
                                                        cols=cols, need_input_grad=need_input_grad)
        return grad_x

    def preactivations(self):
        return [self._cache[2]] if self._cache is not None and self.act == "relu" else []


class Activation(Layer):
    def __init__(self, kind):
        super().__init__()
        self.kind = kind
        self.name = kind

    def forward(self, x):
        a = activate(self.kind, x)
        self._cache = (x, a)
        return a

    def backward(self, grad_out, need_input_grad=True):
        z, a = self._need_cache()
        return activation_grad(self.kind, z, a, grad_out)

    def preactivations(self):
        return [self._cache[0]] if self._cache is not None and self.kind == "relu" else []


def pool_kernel(size, out):
    """Window (= stride) of a non-overlapping average pool that yields ``out`` cells."""
    if out < 1 or out > size:
        raise ShapeError(f"cannot pool extent {size} down to {out}")
    k = size // out
    if (size - k) // k + 1 != out:
        raise ShapeError(f"extent {size} does not pool evenly to {out}")
    return k


class AvgPool(Layer):
    """Non-overlapping k x k average pooling; trailing rows/columns that do not fill a window are dropped."""

    name = "avgpool"

    def __init__(self, k):
        super().__init__()
        self.k = k

    def forward(self, x):
        n, c, H, W = x.shape
        k = self.k
        ho, wo = (H - k) // k + 1, (W - k) // k + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"pool window {k} larger than input {H}x{W}")
        self._cache = x.shape
        return x[:, :, :ho * k, :wo * k].reshape(n, c, ho, k, wo, k).mean(axis=(3, 5))

    def backward(self, grad_out, need_input_grad=True):
        n, c, H, W = self._need_cache()
        k = self.k
        ho, wo = grad_out.shape[2:]
        g = np.zeros((n, c, H, W))
        g[:, :, :ho * k, :wo * k] = np.repeat(np.repeat(grad_out, k, axis=2), k, axis=3) / (k * k)
        return g


class Fc(Layer):
    """Bias-free fully connected layer on the flattened input."""

    name = "fc"

    def __init__(self, n_in, n_out):
        super().__init__()
        self.params["w"] = np.zeros((n_out, n_in))

    def init_params(self, rng):
        w = self.params["w"]
        w[...] = uniform_init(rng, w.shape, w.shape[1])

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        w = self.params["w"]
        if flat.shape[1] != w.shape[1]:
            raise ShapeError(f"fc expects {w.shape[1]} inputs, got {flat.shape[1]}")
        self._cache = (x.shape, flat)
        if self.counter is not None:
            self.counter.record(mults=w.size * x.shape[0], adds=w.size * x.shape[0])
        return flat @ w.T

    def backward(self, grad_out, need_input_grad=True):
        shape, flat = self._need_cache()
        w = self.params["w"]
        grad_out = grad_out.reshape(grad_out.shape[0], -1)
        self.grads["w"] = grad_out.T @ flat
        if not need_input_grad:
            return None
        return (grad_out @ w).reshape(shape)


class Residual(Layer):
    """Identity shortcut around a sequence of shape-preserving layers."""

    name = "res"

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        y = x
        for layer in self.layers:
            y = layer.forward(y)
        if y.shape != x.shape:
            raise ShapeError(f"residual body changes shape {x.shape} -> {y.shape}")
        self._cache = True
        return x + y

    def backward(self, grad_out, need_input_grad=True):
        self._need_cache()
        g = grad_out
        for i, layer in enumerate(reversed(self.layers)):
            last = i == len(self.layers) - 1
            g = layer.backward(g, need_input_grad=need_input_grad or not last)
        if not need_input_grad:
            return None
        return grad_out + g

    def preactivations(self):
        return [z for layer in self.layers for z in layer.preactivations()]

    def clear(self):
        super().clear()
        for layer in self.layers:
            layer.clear()


def lbc_forward(layer, x):
    """Functional form of :meth:`LbcLayer.forward`."""
    return layer.forward(as_tensor(x, ndim=4))


def lbc_backward(layer, x, grad_out):
    """Return ``(grad_x, grad_v)`` for the input of the last :func:`lbc_forward` call."""
    cache = layer._need_cache()
    if cache[0] != np.shape(x):
        raise StateError("cached forward pass was run on a different input shape")
    grad_x = layer.backward(as_tensor(grad_out, ndim=4))
    return grad_x, layer.grads["v"]
