"""
Permuted-sequence decoder.

One layer runs context-position attention (position queries over the
embedded context under the permutation mask), then feature-position
attention (over the encoder features), then an MLP. A linear head maps each
position to the character classes.
"""

import logging
from typing import Optional

import numpy as np

from dualstr.engine import DropoutStream, Module, Parameter, Tensor, ops
from dualstr.errors import ShapeError
from dualstr.layers import MLP, Dropout, LayerNorm, Linear, MultiHeadAttention
from dualstr.masks import with_key_padding

logger = logging.getLogger(__name__)


class DecoderLayer(Module):
    """Pre-norm two-stage attention layer."""

    def __init__(
        self,
        dim: int,
        heads: int,
        rng: np.random.Generator,
        mlp_ratio: int = 4,
        dropout: float = 0.0,
        stream: Optional[DropoutStream] = None,
    ):
        self.norm_query = LayerNorm(dim)
        self.norm_context = LayerNorm(dim)
        self.context_attn = MultiHeadAttention(dim, heads, rng)
        self.norm_feature_query = LayerNorm(dim)
        self.feature_attn = MultiHeadAttention(dim, heads, rng)
        self.norm_mlp = LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio, rng)
        self.drop_context = Dropout(dropout, stream)
        self.drop_feature = Dropout(dropout, stream)
        self.drop_mlp = Dropout(dropout, stream)

    def forward(
        self, query: Tensor, context: Tensor, mask: np.ndarray, features: Tensor
    ) -> Tensor:
        c = self.norm_context(context)
        m1 = ops.add(
            query,
            self.drop_context(self.context_attn(self.norm_query(query), c, c, mask)),
        )
        q2 = self.norm_feature_query(m1)
        m2 = ops.add(m1, self.drop_feature(self.feature_attn(q2, features, features)))
        return ops.add(m2, self.drop_mlp(self.mlp(self.norm_mlp(m2))))


class Decoder(Module):
    def __init__(
        self,
        dim: int,
        seq_len: int,
        num_classes: int,
        context_vocab: int,
        pad_id: int,
        rng: np.random.Generator,
        depth: int = 1,
        head_dim: int = 32,
        mlp_ratio: int = 4,
        dropout: float = 0.0,
        stream: Optional[DropoutStream] = None,
    ):
        self.dim = dim
        self.seq_len = seq_len
        self.num_classes = num_classes
        self.pad_id = pad_id
        heads = max(1, dim // head_dim)
        self.position_queries = Parameter(
            rng.normal(0.0, 0.02, size=(seq_len, dim)), decay=False
        )
        self.token_embed = Parameter(rng.normal(0.0, 0.02, size=(context_vocab, dim)))
        self.context_pos = Parameter(rng.normal(0.0, 0.02, size=(seq_len, dim)))
        self.drop_context = Dropout(dropout, stream)
        self.layers = [
            DecoderLayer(dim, heads, rng, mlp_ratio, dropout, stream)
            for _ in range(depth)
        ]
        self.norm = LayerNorm(dim)
        self.head = Linear(dim, num_classes, rng)
        self.invocations = 0

    def embed_context(self, ids: np.ndarray) -> Tensor:
        """Token embedding plus context position embedding for [batch, n] ids."""
        ids = np.asarray(ids)
        n = ids.shape[-1]
        pos = ops.getitem(self.context_pos, (slice(0, n),))
        tokens = ops.embedding_lookup(self.token_embed, ids)
        return self.drop_context(ops.add(tokens, pos))

    def queries(self, start: int, stop: int, batch: int) -> Tensor:
        rows = ops.getitem(self.position_queries, (slice(start, stop),))
        n = stop - start
        return ops.expand(ops.reshape(rows, (1, n, self.dim)), (batch, n, self.dim))

    def decode(
        self, query: Tensor, context: Tensor, mask: np.ndarray, features: Tensor
    ) -> Tensor:
        """Logits [batch, n_q, classes] for the given position-query rows."""
        n_q, n_k = query.shape[-2], context.shape[-2]
        if np.shape(mask)[-2:] != (n_q, n_k):
            raise ShapeError(
                f"decode: mask {np.shape(mask)} does not match {n_q} queries x {n_k} context rows"
            )
        self.invocations += 1
        x = query
        for layer in self.layers:
            x = layer(x, context, mask, features)
        return self.head(self.norm(x))

    def forward(
        self,
        ids: np.ndarray,
        mask: np.ndarray,
        features: Tensor,
        query_start: int = 0,
    ) -> Tensor:
        """Decode query rows query_start.. against the context ids.

        Context columns holding [P] are blocked for every row.
        """
        ids = np.asarray(ids)
        batch = ids.shape[0]
        n_q = np.shape(mask)[-2]
        context = self.embed_context(ids)
        query = self.queries(query_start, query_start + n_q, batch)
        mask = np.asarray(mask)
        padding = ids == self.pad_id
        if padding.any():
            mask = with_key_padding(mask, padding)
        elif mask.ndim == 3:
            mask = mask[:, None]
        return self.decode(query, context, mask, features)
