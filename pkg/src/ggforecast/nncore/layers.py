"""Differentiable layers with explicit forward/backward passes.

All layers act on the last axis of batch-first arrays. ``forward`` caches
whatever ``backward`` needs, so one forward must precede each backward.
Parameter gradients accumulate until zeroed by the optimizer.
"""
from __future__ import annotations

import numpy as np

from . import functional as F

_DEBUG = False


def set_debug(enabled: bool) -> None:
    """Toggle finite-value assertions after every forward and backward pass."""
    global _DEBUG
    _DEBUG = bool(enabled)


def check_finite(arr, where: str):
    if _DEBUG and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {where}")
    return arr


class Parameter:
    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name: str = ""):
        self.value = value
        self.grad = np.zeros_like(value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base class. Subclasses list their Parameters in ``self._params``."""

    def __init__(self):
        self._params: list[Parameter] = []
        self._children: list[Layer] = []

    def parameters(self) -> list[Parameter]:
        out = list(self._params)
        for child in self._children:
            out.extend(child.parameters())
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for child in self._children:
            out.update(child.buffers())
        return out

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __call__(self, x, training=False):
        return self.forward(x, training)


class Dense(Layer):
    """``y = x @ W.T + b`` with ``W`` of shape (n_out, n_in)."""

    def __init__(self, n_in, n_out, rng=None, name="dense", dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        self.W = Parameter(glorot_uniform(rng, (n_out, n_in), n_in, n_out, dtype), f"{name}.W")
        self.b = Parameter(np.zeros(n_out, dtype=dtype), f"{name}.b")
        self._params = [self.W, self.b]

    def forward(self, x, training=False):
        if x.shape[-1] != self.n_in:
            raise ValueError(
                f"dense: input shape {x.shape} incompatible with weight shape {self.W.value.shape}"
            )
        self._x = x
        return check_finite(x @ self.W.value.T + self.b.value, "dense.forward")

    def backward(self, grad):
        x2 = self._x.reshape(-1, self.n_in)
        g2 = grad.reshape(-1, self.n_out)
        self.W.grad += g2.T @ x2
        self.b.grad += g2.sum(axis=0)
        return check_finite(grad @ self.W.value, "dense.backward")


def dense(x, W: Parameter, b: Parameter):
    """Functional affine map for a single vector or batch."""
    if W.value.ndim != 2 or x.shape[-1] != W.value.shape[1] or b.value.shape != (W.value.shape[0],):
        raise ValueError(f"dense: shape mismatch x{x.shape} vs W{W.value.shape}, b{b.value.shape}")
    return x @ W.value.T + b.value


class Tanh(Layer):
    def forward(self, x, training=False):
        self._y = F.tanh(x)
        return self._y

    def backward(self, grad):
        return grad * (1.0 - self._y**2)


class Sigmoid(Layer):
    def forward(self, x, training=False):
        self._y = F.sigmoid(x)
        return self._y

    def backward(self, grad):
        return grad * self._y * (1.0 - self._y)


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, grad):
        return grad * self._mask


class LeakyReLU(Layer):
    def __init__(self, slope=0.01):
        super().__init__()
        self.slope = slope

    def forward(self, x, training=False):
        self._mask = x >= 0
        return F.leaky_relu(x, self.slope)

    def backward(self, grad):
        return np.where(self._mask, grad, self.slope * grad)


class Softmax(Layer):
    def forward(self, x, training=False):
        self._y = F.softmax(x, axis=-1)
        return self._y

    def backward(self, grad):
        return F.softmax_backward(self._y, grad, axis=-1)


class Dropout(Layer):
    """Inverted dropout: identity at inference."""

    def __init__(self, rate=0.2, rng=None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = self.rng.random(x.shape) >= self.rate
        self._mask = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class BatchNorm(Layer):
    """Per-feature normalization over every axis but the last.

    Running statistics follow ``running = momentum * running + (1 - momentum) * batch``.
    """

    def __init__(self, n_features, momentum=0.99, eps=1e-3, name="bn", dtype=np.float64):
        super().__init__()
        self.momentum, self.eps, self.name = momentum, eps, name
        self.gamma = Parameter(np.ones(n_features, dtype=dtype), f"{name}.gamma")
        self.beta = Parameter(np.zeros(n_features, dtype=dtype), f"{name}.beta")
        self.running_mean = np.zeros(n_features, dtype=dtype)
        self.running_var = np.ones(n_features, dtype=dtype)
        self._params = [self.gamma, self.beta]

    def buffers(self):
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }

    def forward(self, x, training=False):
        axes = tuple(range(x.ndim - 1))
        self._training = training
        if training:
            if x.shape[0] < 2:
                raise ValueError("batch_norm: training mode requires batch size >= 2")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean[...] = m * self.running_mean + (1 - m) * mean
            self.running_var[...] = m * self.running_var + (1 - m) * var
        else:
            mean, var = self.running_mean, self.running_var
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mean) * self._inv_std
        return self.gamma.value * self._xhat + self.beta.value

    def backward(self, grad):
        axes = tuple(range(grad.ndim - 1))
        self.gamma.grad += np.sum(grad * self._xhat, axis=axes)
        self.beta.grad += np.sum(grad, axis=axes)
        dxhat = grad * self.gamma.value
        if not self._training:
            return dxhat * self._inv_std
        count = grad.size // grad.shape[-1]
        return (self._inv_std / count) * (
            count * dxhat
            - dxhat.sum(axis=axes)
            - self._xhat * np.sum(dxhat * self._xhat, axis=axes)
        )


class LayerNorm(Layer):
    """Normalization across the feature axis of each position."""

    def __init__(self, n_features, eps=1e-5, name="ln", dtype=np.float64):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(n_features, dtype=dtype), f"{name}.gamma")
        self.beta = Parameter(np.zeros(n_features, dtype=dtype), f"{name}.beta")
        self._params = [self.gamma, self.beta]

    def forward(self, x, training=False):
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mean) * self._inv_std
        return self.gamma.value * self._xhat + self.beta.value

    def backward(self, grad):
        d = grad.shape[-1]
        lead = tuple(range(grad.ndim - 1))
        self.gamma.grad += np.sum(grad * self._xhat, axis=lead)
        self.beta.grad += np.sum(grad, axis=lead)
        dxhat = grad * self.gamma.value
        return (self._inv_std / d) * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - self._xhat * np.sum(dxhat * self._xhat, axis=-1, keepdims=True)
        )


class GlobalAveragePool1D(Layer):
    """(N, T, C) -> (N, C) mean over time."""

    def forward(self, x, training=False):
        self._t = x.shape[1]
        return x.mean(axis=1)

    def backward(self, grad):
        return np.repeat(grad[:, None, :] / self._t, self._t, axis=1)


class Sequential(Layer):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)
        self._children = self.layers

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad
