import math

import numpy as np
import pytest

from dualstr.engine import Tape, grad_check, precision
from dualstr.masks import ar_mask, sample_training_masks
from dualstr.model import DualBranchRecognizer
from dualstr.tokenizer import TRAIN_CHARSET

from conftest import TOY_WORDS, make_config, random_images


def _masks(model: DualBranchRecognizer, k: int = 6, seed: int = 0) -> np.ndarray:
    return sample_training_masks(k, model.seq_len, np.random.default_rng(seed))


def test_initial_losses_are_near_uniform(toy_model, images):
    out = toy_model.forward_train(images, TOY_WORDS, _masks(toy_model))
    expected = math.log(95)
    assert abs(out.visual_loss.item() - expected) / expected < 0.02
    assert abs(out.cross_loss.item() - expected) / expected < 0.02
    assert out.loss.item() == pytest.approx(
        out.visual_loss.item() + out.cross_loss.item(), rel=1e-5
    )


def test_output_shapes(toy_model, images):
    out = toy_model.forward_train(images, TOY_WORDS, _masks(toy_model, k=2))
    assert out.y_vis.shape == (len(TOY_WORDS), 6, 95)
    assert out.y_cross.shape == (len(TOY_WORDS), 6, 95)
    assert len(out.cross_text) == len(TOY_WORDS)
    assert toy_model.encode_image(images).shape == (len(TOY_WORDS), 9, 32)
    assert toy_model.encode_text(TOY_WORDS).shape == (len(TOY_WORDS), 8, 32)


def test_cross_loss_does_not_reach_image_encoder(toy_model, images):
    with Tape() as tape:
        out = toy_model.forward_train(images, TOY_WORDS, _masks(toy_model, k=2))
    tape.backward(out.cross_loss)
    for p in toy_model.image_encoder.parameters():
        assert p.grad is None or not p.grad.any()
    assert any(
        p.grad is not None and p.grad.any() for p in toy_model.text_encoder.parameters()
    )
    assert all(p.grad is None for p in toy_model.visual_decoder.parameters())


def test_visual_loss_trains_image_encoder(toy_model, images):
    with Tape() as tape:
        out = toy_model.forward_train(images, TOY_WORDS, _masks(toy_model, k=2))
    tape.backward(out.visual_loss)
    assert toy_model.image_encoder.patch_embed.weight.grad.any()


def test_per_sample_masks(toy_model, images):
    from dualstr.masks import sample_batch_masks

    rng = np.random.default_rng(0)
    masks = sample_batch_masks(3, toy_model.seq_len, rng, batch=len(TOY_WORDS))
    out = toy_model.forward_train(images, TOY_WORDS, masks)
    assert np.isfinite(out.loss.item())


def test_full_model_gradients_match_finite_differences():
    config = make_config(train={"teacher_force_text": True})
    with precision(np.float64):
        model = DualBranchRecognizer(config)
        images = random_images(3, seed=4)
        words = TOY_WORDS[:3]
        masks = _masks(model, k=3, seed=2)
        params = [
            model.image_encoder.patch_embed.weight,
            model.image_encoder.proj.weight,
            model.text_encoder.token_embed,
            model.visual_decoder.position_queries,
            model.cross_decoder.layers[0].feature_attn.v_proj.weight,
            model.cross_decoder.head.bias,
        ]

        def loss(*_params):
            return model.forward_train(images, words, masks).loss

        err = grad_check(loss, params, max_checks=12, seed=3)
    assert err < 1e-3


def test_parameter_groups_full_finetune(toy_model):
    groups = toy_model.parameter_groups()
    assert groups["encoder"] and groups["scratch"]
    encoders = ("image_encoder.", "text_encoder.")
    assert all(n.startswith(encoders) for n, _ in groups["encoder"])
    assert all(
        n.startswith(("visual_decoder.", "cross_decoder.")) for n, _ in groups["scratch"]
    )
    total = sum(p.data.size for g in groups.values() for _, p in g)
    assert total == toy_model.num_parameters(trainable_only=True)


def test_text_freezing_halves_trainable_text_blocks():
    model = DualBranchRecognizer(make_config(freezing={"text_freeze_layers": 1}))
    assert not model.text_encoder.token_embed.requires_grad
    assert all(not p.requires_grad for p in model.text_encoder.blocks[0].parameters())
    assert all(p.requires_grad for p in model.text_encoder.blocks[1].parameters())


def test_residual_adapter_mode_trains_adapters_only():
    model = DualBranchRecognizer(make_config(adapter={"mode": "residual_adapter"}))
    groups = model.parameter_groups()
    assert groups["encoder"] == []
    names = [n for n, _ in groups["scratch"]]
    assert any(n.startswith("image_adapter.") for n in names)
    assert any(n.startswith("text_adapter.") for n in names)
    features = model.image_encoder(random_images(2)).data
    adapted = model.encode_image(random_images(2)).data
    np.testing.assert_allclose(adapted, 0.8 * features, rtol=1e-5)


def test_same_seed_same_weights():
    a = DualBranchRecognizer(make_config()).state_dict()
    b = DualBranchRecognizer(make_config()).state_dict()
    assert a.keys() == b.keys()
    for name in a:
        np.testing.assert_array_equal(a[name], b[name])


def _mean_nll(logits: np.ndarray, targets: np.ndarray, ignore_id: int) -> float:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    keep = targets != ignore_id
    picked = np.take_along_axis(log_probs, np.where(keep, targets, 0)[..., None], -1)
    return float(-picked[..., 0][keep].mean())


def test_single_left_to_right_mask_loss_matches_a_hand_built_pipeline():
    with precision(np.float64):
        model = DualBranchRecognizer(make_config())
        tok = model.char_tokenizer
        images = random_images(4, seed=7)
        words = TOY_WORDS[:4]
        n = tok.seq_len
        targets = np.full((4, n), tok.pad_id)
        context = np.full((4, n), tok.pad_id)
        context[:, 0] = tok.begin_id
        for b, word in enumerate(words):
            ids = [TRAIN_CHARSET.index(c) + 1 for c in word]
            targets[b, : len(ids) + 1] = ids + [tok.END]
            context[b, 1 : len(ids) + 1] = ids
        mask = ar_mask(n)

        out = model.forward_train(images, words, mask[None])

        features = model.encode_image(images)
        visual = model.visual_decoder(context, mask, features).data
        text = tok.decode_batch(visual)
        fused = model.cross_features(features, text)
        cross = model.cross_decoder(context, mask, fused).data
    visual_loss = _mean_nll(visual, targets, tok.pad_id)
    cross_loss = _mean_nll(cross, targets, tok.pad_id)
    assert out.cross_text == text
    assert out.visual_loss.item() == pytest.approx(visual_loss, rel=1e-9)
    assert out.cross_loss.item() == pytest.approx(cross_loss, rel=1e-9)
    assert out.loss.item() == pytest.approx(visual_loss + cross_loss, rel=1e-9)
