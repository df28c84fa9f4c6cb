"""
Building blocks shared by the encoders and the decoder.

Weights are laid out [in, out]. Initialization follows the usual
transformer recipe: N(0, 0.02) weights, zero biases, unit LayerNorm gain.
"""

import math
from typing import Optional

import numpy as np

from dualstr.engine import DropoutStream, Module, Parameter, Tensor, ops
from dualstr.errors import ConfigError

INIT_STD = 0.02


def normal_init(
    rng: np.random.Generator, shape: tuple[int, ...], std: float = INIT_STD
) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Linear(Module):
    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        bias: bool = True,
        zero_init: bool = False,
    ):
        weight = (
            np.zeros((in_dim, out_dim))
            if zero_init
            else normal_init(rng, (in_dim, out_dim))
        )
        self.weight = Parameter(weight)
        self.bias = Parameter(np.zeros(out_dim), decay=False) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = Parameter(np.ones(dim), decay=False)
        self.bias = Parameter(np.zeros(dim), decay=False)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, self.eps)


class Dropout(Module):
    """Dropout fed by a counter-based stream; identity in eval mode."""

    def __init__(self, rate: float, stream: Optional[DropoutStream]):
        self.rate = rate
        self.stream = stream
        self.layer_index = stream.register_layer() if stream is not None else -1

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0 or self.stream is None:
            return x
        return ops.dropout(x, self.rate, True, self.stream.generator(self.layer_index))


class MultiHeadAttention(Module):
    """Scaled dot-product attention over [batch, rows, dim] inputs.

    The additive mask broadcasts against [batch, heads, queries, keys].
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if heads <= 0 or dim % heads:
            raise ConfigError(f"attention width {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        batch, rows, _ = x.shape
        x = ops.reshape(x, (batch, rows, self.heads, self.head_dim))
        return ops.transpose(x, (0, 2, 1, 3))

    def forward(
        self,
        query: Tensor,
        key: Tensor,
        value: Tensor,
        mask: Optional[np.ndarray] = None,
    ) -> Tensor:
        batch, rows, dim = query.shape
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        scores = ops.scale(ops.matmul(q, ops.swap_last(k)), 1.0 / math.sqrt(self.head_dim))
        weights = ops.softmax_masked(scores, mask)
        mixed = ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3))
        return self.out_proj(ops.reshape(mixed, (batch, rows, dim)))


class MLP(Module):
    def __init__(
        self,
        dim: int,
        hidden: int,
        rng: np.random.Generator,
        activation: str = "gelu",
    ):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        self.activation = ops.gelu if activation == "gelu" else ops.relu

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.activation(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm self-attention block."""

    def __init__(
        self,
        dim: int,
        heads: int,
        rng: np.random.Generator,
        mlp_ratio: int = 4,
        dropout: float = 0.0,
        stream: Optional[DropoutStream] = None,
    ):
        self.ln_1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln_2 = LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio, rng)
        self.drop_attn = Dropout(dropout, stream)
        self.drop_mlp = Dropout(dropout, stream)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        h = self.ln_1(x)
        x = ops.add(x, self.drop_attn(self.attn(h, h, h, mask)))
        return ops.add(x, self.drop_mlp(self.mlp(self.ln_2(x))))


def causal_mask(n: int) -> np.ndarray:
    """Additive mask letting row i see columns 0..i."""
    return np.triu(np.full((n, n), -np.inf), k=1)
