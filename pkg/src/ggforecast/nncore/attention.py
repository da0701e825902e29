"""Causal multi-head self-attention and the post-norm encoder block."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .layers import Dense, Layer, LayerNorm, ReLU, Sequential


class PositionalEncoding(Layer):
    """Adds the fixed sinusoidal table to (N, T, d) input."""

    def __init__(self, d_model):
        super().__init__()
        self.d_model = d_model

    def forward(self, x, training=False):
        return x + F.sinusoidal_encoding(x.shape[1], self.d_model, x.dtype)

    def backward(self, grad):
        return grad


def causal_mask(length):
    """Boolean (T, T) mask, True where key position j lies in the future of query i."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


class MultiHeadSelfAttention(Layer):
    def __init__(self, d_model, n_heads, causal=True, rng=None, name="mha", dtype=np.float64):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} is not divisible by heads={n_heads}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_model, self.n_heads = d_model, n_heads
        self.head_dim = d_model // n_heads
        self.causal = causal
        self.q = Dense(d_model, d_model, rng, f"{name}.q", dtype)
        self.k = Dense(d_model, d_model, rng, f"{name}.k", dtype)
        self.v = Dense(d_model, d_model, rng, f"{name}.v", dtype)
        self.o = Dense(d_model, d_model, rng, f"{name}.o", dtype)
        self._children = [self.q, self.k, self.v, self.o]
        self.attention_weights = None

    def _split(self, x):
        n, t, _ = x.shape
        return x.reshape(n, t, self.n_heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, x):
        n, _, t, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(n, t, self.d_model)

    def forward(self, x, training=False):
        Q = self._split(self.q.forward(x))
        K = self._split(self.k.forward(x))
        V = self._split(self.v.forward(x))
        scale = 1.0 / np.sqrt(self.head_dim)
        scores = (Q @ K.transpose(0, 1, 3, 2)) * scale
        if self.causal:
            scores = np.where(causal_mask(x.shape[1]), -np.inf, scores)
        A = F.softmax(scores, axis=-1)
        self._Q, self._K, self._V, self._A, self._scale = Q, K, V, A, scale
        self.attention_weights = A
        return self.o.forward(self._merge(A @ V))

    def backward(self, grad):
        d_ctx = self._split(self.o.backward(grad))
        A, V = self._A, self._V
        dA = d_ctx @ V.transpose(0, 1, 3, 2)
        dV = A.transpose(0, 1, 3, 2) @ d_ctx
        dS = F.softmax_backward(A, dA, axis=-1) * self._scale
        dQ = dS @ self._K
        dK = dS.transpose(0, 1, 3, 2) @ self._Q
        return (
            self.q.backward(self._merge(dQ))
            + self.k.backward(self._merge(dK))
            + self.v.backward(self._merge(dV))
        )


class EncoderBlock(Layer):
    """attention -> add & norm -> feed-forward (ReLU) -> add & norm."""

    def __init__(self, d_model, n_heads, d_ff, rng=None, name="block", dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.attn = MultiHeadSelfAttention(d_model, n_heads, True, rng, f"{name}.attn", dtype)
        self.norm1 = LayerNorm(d_model, name=f"{name}.norm1", dtype=dtype)
        self.ffn = Sequential(
            Dense(d_model, d_ff, rng, f"{name}.ff1", dtype),
            ReLU(),
            Dense(d_ff, d_model, rng, f"{name}.ff2", dtype),
        )
        self.norm2 = LayerNorm(d_model, name=f"{name}.norm2", dtype=dtype)
        self._children = [self.attn, self.norm1, self.ffn, self.norm2]

    def forward(self, x, training=False):
        h = self.norm1.forward(x + self.attn.forward(x, training), training)
        return self.norm2.forward(h + self.ffn.forward(h, training), training)

    def backward(self, grad):
        g = self.norm2.backward(grad)
        g = g + self.ffn.backward(g)
        g = self.norm1.backward(g)
        return g + self.attn.backward(g)
