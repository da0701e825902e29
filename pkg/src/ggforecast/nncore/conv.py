from __future__ import annotations

import numpy as np

from .layers import Layer, Parameter, glorot_uniform


class CausalConv1D(Layer):
    """Dilated causal convolution over the time axis of (N, T, C_in) input.

    ``out[t] = sum_i x[t - d*i] @ W[i] + b`` for taps ``i = 0..k-1``; positions
    before the sequence start read zeros, so the output keeps length T and
    never looks ahead.
    """

    def __init__(self, c_in, c_out, kernel_size=3, dilation=1, rng=None, name="conv", dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in, self.c_out = c_in, c_out
        self.kernel_size, self.dilation = kernel_size, dilation
        self.W = Parameter(
            glorot_uniform(rng, (kernel_size, c_in, c_out), kernel_size * c_in, kernel_size * c_out, dtype),
            f"{name}.W",
        )
        self.b = Parameter(np.zeros(c_out, dtype=dtype), f"{name}.b")
        self._params = [self.W, self.b]

    @property
    def pad(self):
        return self.dilation * (self.kernel_size - 1)

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[2] != self.c_in:
            raise ValueError(f"conv: expected (N, T, {self.c_in}) input, got {x.shape}")
        n, steps, _ = x.shape
        P = self.pad
        xp = np.concatenate([np.zeros((n, P, self.c_in), dtype=x.dtype), x], axis=1)
        self._xp = xp
        out = np.broadcast_to(self.b.value, (n, steps, self.c_out)).copy()
        for i in range(self.kernel_size):
            start = P - self.dilation * i
            out += xp[:, start : start + steps] @ self.W.value[i]
        return out

    def backward(self, grad):
        n, steps, _ = grad.shape
        P = self.pad
        dxp = np.zeros_like(self._xp)
        g2 = grad.reshape(-1, self.c_out)
        for i in range(self.kernel_size):
            start = P - self.dilation * i
            xs = self._xp[:, start : start + steps]
            self.W.grad[i] += xs.reshape(-1, self.c_in).T @ g2
            dxp[:, start : start + steps] += grad @ self.W.value[i].T
        self.b.grad += g2.sum(axis=0)
        return dxp[:, P:]
