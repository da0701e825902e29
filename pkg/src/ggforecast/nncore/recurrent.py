"""Simple RNN and LSTM layers with backpropagation through time.

Both layers act on the concatenation ``z_t = [x_t ; h_{t-1}]`` and start
from zero states.
"""
from __future__ import annotations

import numpy as np

from . import functional as F
from .layers import Layer, Parameter, glorot_uniform


class SimpleRNN(Layer):
    """``h_t = tanh(W_xh @ [x_t; h_{t-1}] + b_s)``."""

    def __init__(self, n_in, n_hidden, return_sequences=False, rng=None, name="rnn", dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_hidden = n_in, n_hidden
        self.return_sequences = return_sequences
        width = n_in + n_hidden
        self.W_xh = Parameter(glorot_uniform(rng, (n_hidden, width), width, n_hidden, dtype), f"{name}.W_xh")
        self.b_s = Parameter(np.zeros(n_hidden, dtype=dtype), f"{name}.b_s")
        self._params = [self.W_xh, self.b_s]

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ValueError(f"rnn: expected (N, T, {self.n_in}) input, got {x.shape}")
        n, steps, _ = x.shape
        h = np.zeros((n, self.n_hidden), dtype=x.dtype)
        self._z, self._h = [], []
        W, b = self.W_xh.value, self.b_s.value
        for t in range(steps):
            z = np.concatenate([x[:, t], h], axis=1)
            h = np.tanh(z @ W.T + b)
            self._z.append(z)
            self._h.append(h)
        return np.stack(self._h, axis=1) if self.return_sequences else h

    def backward(self, grad):
        steps = len(self._h)
        n = self._h[0].shape[0]
        W = self.W_xh.value
        dx = np.empty((n, steps, self.n_in), dtype=grad.dtype)
        dh_next = np.zeros((n, self.n_hidden), dtype=grad.dtype)
        for t in reversed(range(steps)):
            dh = dh_next
            if self.return_sequences:
                dh = dh + grad[:, t]
            elif t == steps - 1:
                dh = dh + grad
            da = dh * (1.0 - self._h[t] ** 2)
            self.W_xh.grad += da.T @ self._z[t]
            self.b_s.grad += da.sum(axis=0)
            dz = da @ W
            dx[:, t] = dz[:, : self.n_in]
            dh_next = dz[:, self.n_in :]
        return dx


class LSTM(Layer):
    """Gated cell: forget/input/candidate/output gates over ``[x_t; h_{t-1}]``.

    ``C_t = f_t * C_{t-1} + i_t * C~_t`` and ``h_t = tanh(C_t) * o_t``.
    The forget-gate bias starts at 1.
    """

    GATES = ("f", "i", "C", "o")

    def __init__(self, n_in, n_hidden, return_sequences=False, rng=None, name="lstm", dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_hidden = n_in, n_hidden
        self.return_sequences = return_sequences
        width = n_in + n_hidden
        self.W = {}
        self.b = {}
        for g in self.GATES:
            self.W[g] = Parameter(glorot_uniform(rng, (n_hidden, width), width, n_hidden, dtype), f"{name}.W_{g}")
            self.b[g] = Parameter(np.zeros(n_hidden, dtype=dtype), f"{name}.b_{g}")
        self.b["f"].value[...] = 1.0
        self._params = [self.W[g] for g in self.GATES] + [self.b[g] for g in self.GATES]

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ValueError(f"lstm: expected (N, T, {self.n_in}) input, got {x.shape}")
        n, steps, _ = x.shape
        H = self.n_hidden
        W_all = np.concatenate([self.W[g].value for g in self.GATES], axis=0)
        b_all = np.concatenate([self.b[g].value for g in self.GATES])
        self._W_all = W_all
        h = np.zeros((n, H), dtype=x.dtype)
        c = np.zeros((n, H), dtype=x.dtype)
        self._cache = []
        hs = []
        for t in range(steps):
            z = np.concatenate([x[:, t], h], axis=1)
            a = z @ W_all.T + b_all
            f = F.sigmoid(a[:, :H])
            i = F.sigmoid(a[:, H : 2 * H])
            g = np.tanh(a[:, 2 * H : 3 * H])
            o = F.sigmoid(a[:, 3 * H :])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = tc * o
            self._cache.append((z, f, i, g, o, c_prev, tc))
            hs.append(h)
        return np.stack(hs, axis=1) if self.return_sequences else h

    def backward(self, grad):
        steps = len(self._cache)
        n = self._cache[0][0].shape[0]
        H = self.n_hidden
        W_all = self._W_all
        dW_all = np.zeros_like(W_all)
        db_all = np.zeros(4 * H, dtype=W_all.dtype)
        dx = np.empty((n, steps, self.n_in), dtype=grad.dtype)
        dh_next = np.zeros((n, H), dtype=grad.dtype)
        dc_next = np.zeros((n, H), dtype=grad.dtype)
        da = np.empty((n, 4 * H), dtype=grad.dtype)
        for t in reversed(range(steps)):
            z, f, i, g, o, c_prev, tc = self._cache[t]
            dh = dh_next
            if self.return_sequences:
                dh = dh + grad[:, t]
            elif t == steps - 1:
                dh = dh + grad
            do = dh * tc
            dc = dh * o * (1.0 - tc**2) + dc_next
            da[:, :H] = dc * c_prev * f * (1.0 - f)
            da[:, H : 2 * H] = dc * g * i * (1.0 - i)
            da[:, 2 * H : 3 * H] = dc * i * (1.0 - g**2)
            da[:, 3 * H :] = do * o * (1.0 - o)
            dc_next = dc * f
            dW_all += da.T @ z
            db_all += da.sum(axis=0)
            dz = da @ W_all
            dx[:, t] = dz[:, : self.n_in]
            dh_next = dz[:, self.n_in :]
        for k, gname in enumerate(self.GATES):
            self.W[gname].grad += dW_all[k * H : (k + 1) * H]
            self.b[gname].grad += db_all[k * H : (k + 1) * H]
        return dx
