"""
Dual-branch recognizer: a visual branch (image encoder + decoder) and a
cross-modal branch (decoder over image features concatenated with text
features of the visual prediction).
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from dualstr.config import ModelConfig, RunConfig
from dualstr.decoder import Decoder
from dualstr.encoders import (
    ImageEncoder,
    LadderSideNetwork,
    ResidualAdapter,
    TextEncoder,
)
from dualstr.engine import DropoutStream, Module, Parameter, Tensor, ops
from dualstr.tokenizer import CharTokenizer, TextTokenizer

logger = logging.getLogger(__name__)


@dataclass(kw_only=True, frozen=True)
class TrainStepOutput:
    loss: Tensor
    visual_loss: Tensor
    cross_loss: Tensor
    y_vis: Tensor
    y_cross: Tensor
    cross_text: list[str]


class DualBranchRecognizer(Module):
    def __init__(self, config: RunConfig):
        m: ModelConfig = config.model
        rng = np.random.default_rng(m.init_seed)
        self.config = config
        self.char_tokenizer = CharTokenizer(
            config.charset.train_charset,
            m.max_label_length,
            config.charset.eval_charset,
        )
        self.text_tokenizer = TextTokenizer(config.charset.eval_charset, m.text_length)
        self.dropout_stream = DropoutStream(config.train.seed)
        stream = self.dropout_stream

        adapter = config.adapter.mode
        self.image_encoder = ImageEncoder(
            m.image_h,
            m.image_w,
            m.patch,
            m.image_layers,
            m.image_dim,
            m.image_heads,
            m.joint_dim,
            rng,
            m.mlp_ratio,
            m.dropout,
            stream,
        )
        self.text_encoder = TextEncoder(
            self.text_tokenizer.vocab_size,
            m.text_length,
            m.text_layers,
            m.text_dim,
            m.text_heads,
            m.joint_dim,
            rng,
            m.mlp_ratio,
            m.dropout,
            stream,
            token_only=config.freezing.token_only,
        )

        self.image_adapter: Optional[Module] = None
        self.text_adapter: Optional[Module] = None
        if adapter == "residual_adapter":
            self.image_encoder.freeze()
            self.text_encoder.freeze()
            lam = config.adapter.lam
            self.image_adapter = ResidualAdapter(m.joint_dim, lam, rng)
            self.text_adapter = ResidualAdapter(m.joint_dim, lam, rng)
        elif adapter == "ladder_side":
            self.image_encoder.freeze()
            self.text_encoder.freeze()
            r = config.adapter.reduction
            self.image_adapter = LadderSideNetwork(
                m.image_dim,
                m.image_layers,
                m.joint_dim,
                r,
                config.adapter.connected_layers,
                rng,
                m.mlp_ratio,
            )
            self.text_adapter = LadderSideNetwork(
                m.text_dim,
                m.text_layers,
                m.joint_dim,
                r,
                config.adapter.text_connected_layers,
                rng,
                m.mlp_ratio,
                causal_length=m.text_length,
            )
        else:
            self.image_encoder.apply_freezing(config.freezing.image_freeze_layers)
            if not config.freezing.token_only:
                self.text_encoder.apply_freezing(config.freezing.text_freeze_layers)

        tok = self.char_tokenizer
        decoder_args = dict(
            dim=m.joint_dim,
            seq_len=tok.seq_len,
            num_classes=tok.num_classes,
            context_vocab=tok.vocab_size,
            pad_id=tok.pad_id,
            depth=m.dec_depth,
            head_dim=m.dec_head_dim,
            mlp_ratio=m.mlp_ratio,
            dropout=m.dropout,
            stream=stream,
        )
        self.visual_decoder = Decoder(rng=rng, **decoder_args)  # type: ignore[arg-type]
        self.cross_decoder = Decoder(rng=rng, **decoder_args)  # type: ignore[arg-type]
        logger.info(
            f"Built recognizer: {self.num_parameters()} parameters, "
            f"{self.num_parameters(trainable_only=True)} trainable"
        )

    @property
    def seq_len(self) -> int:
        return self.char_tokenizer.seq_len

    def encode_image(self, images: np.ndarray) -> Tensor:
        """F_i: [batch, L_i, D]."""
        if isinstance(self.image_adapter, LadderSideNetwork):
            return self.image_adapter(self.image_encoder.hidden_states(images))
        features = self.image_encoder(images)
        if self.image_adapter is not None:
            features = self.image_adapter(features)
        return features

    def encode_text(self, words: Sequence[str]) -> Tensor:
        """F_t: [batch, L_t, D] for the lower-cased words."""
        ids = self.text_tokenizer.encode_batch(words)
        if isinstance(self.text_adapter, LadderSideNetwork):
            return self.text_adapter(self.text_encoder.hidden_states(ids))
        features = self.text_encoder(ids)
        if self.text_adapter is not None:
            features = self.text_adapter(features)
        return features

    def cross_features(self, image_features: Tensor, words: Sequence[str]) -> Tensor:
        """F_c = [F_i; F_t], with F_i detached so the cross branch never trains the image encoder."""
        return ops.concat_rows(ops.stop_gradient(image_features), self.encode_text(words))

    def forward_train(
        self,
        images: np.ndarray,
        labels: Sequence[str],
        masks: np.ndarray,
        loss_weight: float = 1.0,
    ) -> TrainStepOutput:
        """Loss averaged over the K masks, both branches sharing each mask.

        `masks` is [K, N, N] (shared) or [batch, K, N, N] (per sample).
        """
        tok = self.char_tokenizer
        targets = tok.encode_batch(labels, as_target=True)
        context = tok.encode_batch(labels, as_target=False)
        per_sample = masks.ndim == 4
        k = masks.shape[1] if per_sample else masks.shape[0]

        image_features = self.encode_image(images)
        visual_losses, visual_logits = [], []
        for i in range(k):
            mask = masks[:, i] if per_sample else masks[i]
            logits = self.visual_decoder(context, mask, image_features)
            visual_logits.append(logits)
            visual_losses.append(ops.cross_entropy_ignored(logits, targets, tok.pad_id))

        if self.config.train.teacher_force_text:
            cross_text = list(labels)
        else:
            cross_text = tok.decode_batch(visual_logits[0].data)
        fused = self.cross_features(image_features, cross_text)
        cross_losses, cross_logits = [], []
        for i in range(k):
            mask = masks[:, i] if per_sample else masks[i]
            logits = self.cross_decoder(context, mask, fused)
            cross_logits.append(logits)
            cross_losses.append(ops.cross_entropy_ignored(logits, targets, tok.pad_id))

        visual_loss = ops.scale(_total(visual_losses), loss_weight / k)
        cross_loss = ops.scale(_total(cross_losses), loss_weight / k)
        return TrainStepOutput(
            loss=ops.add(visual_loss, cross_loss),
            visual_loss=visual_loss,
            cross_loss=cross_loss,
            y_vis=visual_logits[0],
            y_cross=cross_logits[0],
            cross_text=cross_text,
        )

    def encoder_parameters(self) -> list[tuple[str, Parameter]]:
        named = list(self.image_encoder.named_parameters("image_encoder."))
        named += list(self.text_encoder.named_parameters("text_encoder."))
        return named

    def parameter_groups(self) -> dict[str, list[tuple[str, Parameter]]]:
        """Trainable parameters split into the encoder group and the from-scratch group."""
        encoder_ids = {id(p) for _, p in self.encoder_parameters()}
        groups: dict[str, list[tuple[str, Parameter]]] = {"encoder": [], "scratch": []}
        for name, p in self.named_parameters():
            if not p.requires_grad:
                continue
            groups["encoder" if id(p) in encoder_ids else "scratch"].append((name, p))
        return groups


def _total(terms: list[Tensor]) -> Tensor:
    out = terms[0]
    for term in terms[1:]:
        out = ops.add(out, term)
    return out
