"""
Inference: autoregressive decoding, the dual predict-and-refine scheme and
the single-pass cross-modal variant.

All decoding is greedy and runs without a tape.
"""

import logging
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from dualstr.decoder import Decoder
from dualstr.engine import Tensor
from dualstr.errors import ConfigError
from dualstr.masks import ar_mask, cloze_mask
from dualstr.model import DualBranchRecognizer
from dualstr.tokenizer import CharTokenizer

logger = logging.getLogger(__name__)


@dataclass(kw_only=True, frozen=True)
class DecodePolicy:
    refine_iters: int = 1
    fast_cross: bool = False
    refine_visual_context: Literal["visual", "cross"] = "cross"

    def __post_init__(self) -> None:
        if self.refine_iters < 0:
            raise ConfigError(f"refine_iters must be >= 0, got {self.refine_iters}")


@dataclass(kw_only=True, frozen=True)
class Prediction:
    visual: str
    cross: str
    final: str


@dataclass(kw_only=True, frozen=True)
class BatchPrediction:
    predictions: list[Prediction]
    visual_logits: np.ndarray
    cross_logits: np.ndarray
    visual_invocations: int
    cross_invocations: int


def ar_decode(
    decoder: Decoder, features: Tensor, tokenizer: CharTokenizer
) -> tuple[np.ndarray, list[str]]:
    """Greedy left-to-right decode, one position per decoder call.

    Stops once every sample has emitted [E]. Rows never decoded stay zero,
    which reads out as [E].
    """
    batch = features.shape[0]
    n = tokenizer.seq_len
    mask = ar_mask(n)
    ids = np.full((batch, n), tokenizer.pad_id, dtype=np.int64)
    ids[:, 0] = tokenizer.begin_id
    logits = np.zeros((batch, n, tokenizer.num_classes), dtype=np.float64)
    finished = np.zeros(batch, dtype=bool)
    for k in range(n - 1):
        step = decoder(ids[:, : k + 1], mask[k : k + 1, : k + 1], features, query_start=k)
        logits[:, k] = step.data[:, 0]
        best = logits[:, k].argmax(axis=-1)
        ids[:, k + 1] = best
        finished |= best == tokenizer.END
        if finished.all():
            break
    return logits, tokenizer.decode_batch(logits)


def _context(tokenizer: CharTokenizer, words: Sequence[str]) -> np.ndarray:
    return tokenizer.encode_batch(words, as_target=False, strict=False)


def fast_cross_decode(
    decoder: Decoder,
    visual_prediction: Sequence[str],
    features: Tensor,
    tokenizer: CharTokenizer,
) -> np.ndarray:
    """One decoder call over all rows, with [B] + the visual prediction as context."""
    context = _context(tokenizer, visual_prediction)
    return decoder(context, ar_mask(tokenizer.seq_len), features).data


def cloze_decode(
    decoder: Decoder,
    previous: Sequence[str],
    features: Tensor,
    tokenizer: CharTokenizer,
) -> np.ndarray:
    """Refinement pass: every position sees the whole previous prediction but itself."""
    context = _context(tokenizer, previous)
    return decoder(context, cloze_mask(tokenizer.seq_len), features).data


def predict_batch(
    model: DualBranchRecognizer,
    images: np.ndarray,
    policy: DecodePolicy = DecodePolicy(),
) -> BatchPrediction:
    """Visual AR decode, cross-modal decode, then cloze refinement of both branches."""
    model.eval()
    tok = model.char_tokenizer
    vis_dec, cross_dec = model.visual_decoder, model.cross_decoder
    vis_start, cross_start = vis_dec.invocations, cross_dec.invocations

    image_features = model.encode_image(images)
    vis_logits, visual = ar_decode(vis_dec, image_features, tok)
    fused = model.cross_features(image_features, visual)
    if policy.fast_cross:
        cross_logits = fast_cross_decode(cross_dec, visual, fused, tok)
        cross = tok.decode_batch(cross_logits)
    else:
        cross_logits, cross = ar_decode(cross_dec, fused, tok)

    for _ in range(policy.refine_iters):
        source = visual if policy.refine_visual_context == "visual" else cross
        vis_logits = cloze_decode(vis_dec, source, image_features, tok)
        visual = tok.decode_batch(vis_logits)
        fused = model.cross_features(image_features, visual)
        cross_logits = cloze_decode(cross_dec, cross, fused, tok)
        cross = tok.decode_batch(cross_logits)

    predictions = [Prediction(visual=v, cross=c, final=c) for v, c in zip(visual, cross)]
    return BatchPrediction(
        predictions=predictions,
        visual_logits=np.asarray(vis_logits),
        cross_logits=np.asarray(cross_logits),
        visual_invocations=vis_dec.invocations - vis_start,
        cross_invocations=cross_dec.invocations - cross_start,
    )


def predict(
    model: DualBranchRecognizer,
    image: np.ndarray,
    policy: DecodePolicy = DecodePolicy(),
) -> Prediction:
    return predict_batch(model, image[None], policy).predictions[0]


def predict_many(
    model: DualBranchRecognizer,
    images: np.ndarray,
    policy: DecodePolicy = DecodePolicy(),
    batch_size: int = 64,
) -> list[Prediction]:
    out: list[Prediction] = []
    for start in range(0, len(images), batch_size):
        out.extend(predict_batch(model, images[start : start + batch_size], policy).predictions)
    logger.debug(f"Decoded {len(out)} images")
    return out
