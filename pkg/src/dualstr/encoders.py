"""
Image and text encoders with partial freezing, plus the two
parameter-efficient variants: a residual adapter and a ladder side network.

Both encoders return features of every token, normalized and projected into
the joint D-dimensional space.
"""

import logging
from typing import Optional, Sequence

import numpy as np

from dualstr.engine import DropoutStream, Module, Parameter, Tensor, ops
from dualstr.errors import ConfigError
from dualstr.layers import (
    LayerNorm,
    Linear,
    TransformerBlock,
    causal_mask,
    normal_init,
)

logger = logging.getLogger(__name__)

PIXEL_MEAN = 0.5
PIXEL_STD = 0.5


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """[B, H, W, 3] pixels -> [B, (H/p)*(W/p), p*p*3] non-overlapping patches."""
    batch, height, width, channels = images.shape
    gh, gw = height // patch, width // patch
    x = images.reshape(batch, gh, patch, gw, patch, channels)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(batch, gh * gw, patch * patch * channels)


def normalize_pixels(images: np.ndarray) -> np.ndarray:
    return (np.asarray(images, dtype=np.float64) / 255.0 - PIXEL_MEAN) / PIXEL_STD


class _Encoder(Module):
    """Shared freezing logic; subclasses define embedding and head parameters."""

    blocks: list[TransformerBlock]

    def embedding_modules(self) -> list[object]:
        raise NotImplementedError

    def head_modules(self) -> list[object]:
        raise NotImplementedError

    @property
    def layers(self) -> int:
        return len(self.blocks)

    def apply_freezing(self, freeze_layers: int) -> None:
        """Freeze the embeddings and the first `freeze_layers` blocks.

        Freezing every block also freezes the final norm and projection.
        """
        if not 0 <= freeze_layers <= self.layers:
            raise ConfigError(
                f"freeze_layers must be in 0..{self.layers}, got {freeze_layers}"
            )
        if freeze_layers == 0:
            return
        for item in self.embedding_modules() + self.blocks[:freeze_layers]:
            _freeze(item)
        if freeze_layers == self.layers:
            for item in self.head_modules():
                _freeze(item)
        logger.debug(
            f"{type(self).__name__}: froze embeddings and {freeze_layers}/{self.layers} blocks"
        )


def _freeze(item: object) -> None:
    if isinstance(item, Parameter):
        item.requires_grad = False
    elif isinstance(item, Module):
        item.freeze()


class ImageEncoder(_Encoder):
    """ViT over non-overlapping patches, returning all L_i = patches + 1 tokens."""

    def __init__(
        self,
        image_h: int,
        image_w: int,
        patch: int,
        layers: int,
        width: int,
        heads: int,
        joint_dim: int,
        rng: np.random.Generator,
        mlp_ratio: int = 4,
        dropout: float = 0.0,
        stream: Optional[DropoutStream] = None,
    ):
        if image_h % patch or image_w % patch:
            raise ConfigError(
                f"image size {image_h}x{image_w} is not divisible by patch {patch}"
            )
        self.image_h = image_h
        self.image_w = image_w
        self.patch = patch
        self.width = width
        self.num_tokens = (image_h // patch) * (image_w // patch) + 1
        self.patch_embed = Linear(patch * patch * 3, width, rng, bias=False)
        self.class_token = Parameter(normal_init(rng, (width,)))
        self.pos_embed = Parameter(normal_init(rng, (self.num_tokens, width)))
        self.ln_pre = LayerNorm(width)
        self.blocks = [
            TransformerBlock(width, heads, rng, mlp_ratio, dropout, stream)
            for _ in range(layers)
        ]
        self.ln_post = LayerNorm(width)
        self.proj = Linear(width, joint_dim, rng, bias=False)

    def embedding_modules(self) -> list[object]:
        return [self.patch_embed, self.class_token, self.pos_embed, self.ln_pre]

    def head_modules(self) -> list[object]:
        return [self.ln_post, self.proj]

    def embed(self, images: np.ndarray) -> Tensor:
        batch, height, width = images.shape[:3]
        if (height, width) != (self.image_h, self.image_w):
            raise ConfigError(
                f"image is {height}x{width}, encoder expects {self.image_h}x{self.image_w}"
            )
        patches = Tensor(patchify(normalize_pixels(images), self.patch))
        tokens = self.patch_embed(patches)
        cls = ops.expand(
            ops.reshape(self.class_token, (1, 1, self.width)), (batch, 1, self.width)
        )
        x = ops.add(ops.concat([cls, tokens], axis=1), self.pos_embed)
        return self.ln_pre(x)

    def hidden_states(self, images: np.ndarray) -> list[Tensor]:
        """Embedding output followed by the output of every block."""
        states = [self.embed(images)]
        for block in self.blocks:
            states.append(block(states[-1]))
        return states

    def forward(self, images: np.ndarray) -> Tensor:
        x = self.embed(images)
        for block in self.blocks:
            x = block(x)
        return self.proj(self.ln_post(x))


class TextEncoder(_Encoder):
    """Causal transformer over the text-tokenizer ids, returning all L_t tokens."""

    def __init__(
        self,
        vocab_size: int,
        length: int,
        layers: int,
        width: int,
        heads: int,
        joint_dim: int,
        rng: np.random.Generator,
        mlp_ratio: int = 4,
        dropout: float = 0.0,
        stream: Optional[DropoutStream] = None,
        token_only: bool = False,
    ):
        self.length = length
        self.width = width
        self.token_only = token_only
        self.token_embed = Parameter(normal_init(rng, (vocab_size, width)))
        self.pos_embed = Parameter(normal_init(rng, (length, width), std=0.01))
        self.blocks = [
            TransformerBlock(width, heads, rng, mlp_ratio, dropout, stream)
            for _ in range(layers)
        ]
        self.ln_final = LayerNorm(width)
        self.proj = Linear(width, joint_dim, rng, bias=False)
        self.mask = causal_mask(length)
        if token_only:
            self.freeze()

    def embedding_modules(self) -> list[object]:
        return [self.token_embed, self.pos_embed]

    def head_modules(self) -> list[object]:
        return [self.ln_final, self.proj]

    def embed(self, ids: np.ndarray) -> Tensor:
        return ops.add(ops.embedding_lookup(self.token_embed, ids), self.pos_embed)

    def hidden_states(self, ids: np.ndarray) -> list[Tensor]:
        states = [self.embed(ids)]
        for block in self.blocks:
            states.append(block(states[-1], self.mask))
        return states

    def forward(self, ids: np.ndarray) -> Tensor:
        x = self.embed(ids)
        if not self.token_only:
            for block in self.blocks:
                x = block(x, self.mask)
        return self.proj(self.ln_final(x))


class ResidualAdapter(Module):
    """lambda * MLP(f) + (1 - lambda) * f, with the second linear zero-initialized."""

    def __init__(
        self,
        dim: int,
        lam: float,
        rng: np.random.Generator,
        reduction: int = 4,
    ):
        if not 0.0 <= lam <= 1.0:
            raise ConfigError(f"adapter lambda must be in [0, 1], got {lam}")
        self.lam = lam
        self.down = Linear(dim, dim // reduction, rng, bias=False)
        self.up = Linear(dim // reduction, dim, rng, bias=False, zero_init=True)

    def forward(self, f: Tensor) -> Tensor:
        adapted = self.up(ops.relu(self.down(f)))
        return ops.add(ops.scale(adapted, self.lam), ops.scale(f, 1.0 - self.lam))


class LadderSideNetwork(Module):
    """Narrow trainable side network fed by downsampled frozen-encoder states.

    Connected layer indices are 1-based block outputs of the base encoder.
    """

    def __init__(
        self,
        base_width: int,
        base_layers: int,
        joint_dim: int,
        reduction: int,
        connected_layers: Sequence[int],
        rng: np.random.Generator,
        mlp_ratio: int = 4,
        causal_length: Optional[int] = None,
    ):
        if reduction not in (2, 4, 8):
            raise ConfigError(f"side reduction must be 2, 4 or 8, got {reduction}")
        layers = list(connected_layers)
        if not layers:
            raise ConfigError("ladder side network needs at least one connected layer")
        bad = [i for i in layers if not 1 <= i <= base_layers]
        if bad:
            raise ConfigError(
                f"connected layers {bad} are outside the base encoder's 1..{base_layers}"
            )
        self.connected_layers = layers
        self.side_width = base_width // reduction
        heads = max(1, self.side_width // 32)
        self.down_embed = Linear(base_width, self.side_width, rng)
        self.downs = [Linear(base_width, self.side_width, rng) for _ in layers]
        self.gates = [Parameter(np.zeros(1), decay=False) for _ in layers]
        self.side_blocks = [
            TransformerBlock(self.side_width, heads, rng, mlp_ratio) for _ in layers
        ]
        self.side_norm = LayerNorm(self.side_width)
        self.up = Linear(self.side_width, joint_dim, rng)
        self.mask = causal_mask(causal_length) if causal_length else None

    @property
    def depth(self) -> int:
        return len(self.side_blocks)

    def parameter_breakdown(self) -> dict[str, int]:
        blocks = sum(block.num_parameters() for block in self.side_blocks)
        return {
            "side_blocks": blocks,
            "bridges": self.num_parameters() - blocks,
        }

    def forward(self, hidden_states: Sequence[Tensor]) -> Tensor:
        z = self.down_embed(hidden_states[0])
        for layer, down, gate, block in zip(
            self.connected_layers, self.downs, self.gates, self.side_blocks
        ):
            g = ops.sigmoid(gate)
            one_minus = ops.add(ops.scale(g, -1.0), Tensor(np.ones(1)))
            z = ops.add(ops.mul(g, down(hidden_states[layer])), ops.mul(one_minus, z))
            z = block(z, self.mask)
        return self.up(self.side_norm(z))
