import numpy as np
import pytest

from dualstr.engine import Tape, Tensor, ops
from dualstr.encoders import (
    ImageEncoder,
    LadderSideNetwork,
    ResidualAdapter,
    TextEncoder,
    patchify,
)
from dualstr.errors import ConfigError
from dualstr.layers import MultiHeadAttention, causal_mask
from dualstr.masks import sample_training_masks
from dualstr.model import DualBranchRecognizer

from conftest import TOY_WORDS, make_config, random_images


def _image_encoder(layers: int = 2) -> ImageEncoder:
    return ImageEncoder(8, 16, 4, layers, 32, 2, 32, np.random.default_rng(0), mlp_ratio=2)


def test_patchify_order():
    images = np.arange(2 * 4 * 8 * 3).reshape(2, 4, 8, 3)
    patches = patchify(images, 4)
    assert patches.shape == (2, 2, 48)
    np.testing.assert_array_equal(patches[0, 1].reshape(4, 4, 3), images[0, :, 4:8])


def test_image_encoder_returns_every_token():
    encoder = _image_encoder()
    assert encoder.num_tokens == 9
    out = encoder(random_images(3))
    assert out.shape == (3, 9, 32)
    assert len(encoder.hidden_states(random_images(1))) == 3


def test_image_encoder_rejects_wrong_size():
    with pytest.raises(ConfigError):
        _image_encoder()(random_images(1, h=16, w=16))
    with pytest.raises(ConfigError):
        ImageEncoder(9, 16, 4, 1, 32, 2, 32, np.random.default_rng(0))


def test_attention_heads_must_divide_width():
    with pytest.raises(ConfigError):
        MultiHeadAttention(30, 4, np.random.default_rng(0))


def test_causal_text_encoder_ignores_later_tokens():
    encoder = TextEncoder(40, 8, 2, 32, 2, 32, np.random.default_rng(1), mlp_ratio=2)
    ids = np.array([[1, 5, 6, 7, 2, 0, 0, 0]])
    changed = ids.copy()
    changed[0, 3:] = [9, 9, 9, 9, 9]
    a, b = encoder(ids).data, encoder(changed).data
    np.testing.assert_allclose(a[0, :3], b[0, :3], rtol=1e-6, atol=1e-7)
    assert not np.allclose(a[0, 3:], b[0, 3:])


def test_partial_freezing_of_image_encoder():
    encoder = _image_encoder()
    encoder.apply_freezing(1)
    assert not encoder.patch_embed.weight.requires_grad
    assert not encoder.class_token.requires_grad
    assert all(not p.requires_grad for p in encoder.blocks[0].parameters())
    assert all(p.requires_grad for p in encoder.blocks[1].parameters())
    assert encoder.proj.weight.requires_grad


def test_freezing_every_block_freezes_the_head():
    encoder = _image_encoder()
    encoder.apply_freezing(2)
    assert encoder.num_parameters(trainable_only=True) == 0


def test_freeze_out_of_range():
    with pytest.raises(ConfigError):
        _image_encoder().apply_freezing(3)


def test_token_only_text_encoder_skips_blocks():
    encoder = TextEncoder(40, 8, 2, 32, 2, 32, np.random.default_rng(1), token_only=True)
    assert encoder.num_parameters(trainable_only=True) == 0
    ids = np.array([[1, 5, 2, 0, 0, 0, 0, 0]])
    expected = encoder.proj(encoder.ln_final(encoder.embed(ids))).data
    np.testing.assert_array_equal(encoder(ids).data, expected)


def test_residual_adapter_starts_at_scaled_identity():
    adapter = ResidualAdapter(32, 0.2, np.random.default_rng(0))
    f = Tensor(np.random.default_rng(1).normal(size=(2, 5, 32)))
    np.testing.assert_allclose(adapter(f).data, 0.8 * f.data, rtol=1e-6)


def test_residual_adapter_lambda_range():
    with pytest.raises(ConfigError):
        ResidualAdapter(32, 1.5, np.random.default_rng(0))


def test_side_network_block_parameters_scale_with_width():
    rng = np.random.default_rng(0)
    wide = LadderSideNetwork(256, 6, 128, 4, [2, 4, 6], rng)
    narrow = LadderSideNetwork(256, 6, 128, 8, [2, 4, 6], rng)
    assert wide.side_width == 64 and narrow.side_width == 32
    ratio = wide.parameter_breakdown()["side_blocks"] / narrow.parameter_breakdown()["side_blocks"]
    assert ratio == pytest.approx(3.934, abs=1e-3)
    assert abs(ratio - 4.0) / 4.0 < 0.15


def test_side_network_rejects_bad_layers():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        LadderSideNetwork(64, 2, 32, 4, [3], rng)
    with pytest.raises(ConfigError):
        LadderSideNetwork(64, 2, 32, 3, [1], rng)
    with pytest.raises(ConfigError):
        LadderSideNetwork(64, 2, 32, 4, [], rng)


def test_side_network_output_shape():
    encoder = _image_encoder()
    side = LadderSideNetwork(32, 2, 32, 2, [1, 2], np.random.default_rng(2), mlp_ratio=2)
    out = side(encoder.hidden_states(random_images(2)))
    assert out.shape == (2, 9, 32)


def test_ladder_side_leaves_base_encoders_untouched():
    model = DualBranchRecognizer(make_config(adapter={"mode": "ladder_side", "reduction": 2}))
    masks = sample_training_masks(2, model.seq_len, np.random.default_rng(0))
    with Tape() as tape:
        out = model.forward_train(random_images(len(TOY_WORDS)), TOY_WORDS, masks)
    tape.backward(out.loss)
    for _, p in model.encoder_parameters():
        assert p.grad is None
    assert model.image_adapter.gates[0].grad is not None
    assert model.parameter_groups()["encoder"] == []


def test_causal_mask_layout():
    mask = causal_mask(3)
    assert mask[0, 1] == -np.inf and mask[1, 0] == 0.0
    weights = ops.softmax_masked(Tensor(np.zeros((3, 3))), mask).data
    np.testing.assert_allclose(weights[2], [1 / 3, 1 / 3, 1 / 3], rtol=1e-6)
