import numpy as np
import pytest

from dualstr.decoder import Decoder
from dualstr.engine import Tensor
from dualstr.errors import ShapeError
from dualstr.masks import ar_mask, cloze_mask, mask_from_permutation

PAD = 11


@pytest.fixture
def decoder() -> Decoder:
    return Decoder(
        dim=32,
        seq_len=6,
        num_classes=10,
        context_vocab=12,
        pad_id=PAD,
        rng=np.random.default_rng(0),
        head_dim=16,
        mlp_ratio=2,
    )


@pytest.fixture
def features() -> Tensor:
    return Tensor(np.random.default_rng(1).normal(size=(2, 7, 32)))


def _context() -> np.ndarray:
    return np.array([[10, 1, 2, 3, 4, 5], [10, 6, 7, 8, 9, 1]])


def test_logits_shape(decoder, features):
    logits = decoder(_context(), ar_mask(6), features)
    assert logits.shape == (2, 6, 10)
    assert decoder.invocations == 1


def test_blocked_context_has_no_influence(decoder, features):
    # Row for y1 sees [B], y2 and y3 only
    mask = mask_from_permutation([2, 3, 1, 4, 5])
    base = decoder(_context(), mask, features).data
    changed = _context()
    changed[:, 4:] = [[2, 2], [3, 3]]
    perturbed = decoder(changed, mask, features).data
    assert np.abs(base[:, 0] - perturbed[:, 0]).max() == 0.0
    assert not np.allclose(base[:, 4], perturbed[:, 4])


def test_cloze_row_ignores_its_own_character(decoder, features):
    mask = cloze_mask(6)
    base = decoder(_context(), mask, features).data
    changed = _context()
    changed[:, 3] = 9
    perturbed = decoder(changed, mask, features).data
    # Column 3 holds y3, hidden from row y3 (index 2)
    assert np.abs(base[:, 2] - perturbed[:, 2]).max() == 0.0


def test_padding_columns_are_blocked(decoder, features):
    one = Tensor(features.data[:1])
    padded = decoder(np.array([[10, 1, 2, PAD, PAD, PAD]]), cloze_mask(6), one).data
    filled = decoder(np.array([[10, 1, 2, 7, 7, 7]]), cloze_mask(6), one).data
    assert np.isfinite(padded).all()
    assert not np.allclose(padded[0, 0], filled[0, 0])
    # The [E] row sees [B] and the two characters only once the rest is padding
    trimmed = decoder(np.array([[10, 1, 2]]), np.zeros((6, 3)), one).data
    np.testing.assert_allclose(padded[0, 5], trimmed[0, 5], rtol=1e-4, atol=1e-5)


def test_query_window(decoder, features):
    full = decoder(_context(), ar_mask(6), features).data
    step = decoder(_context()[:, :3], ar_mask(6)[2:3, :3], features, query_start=2).data
    assert step.shape == (2, 1, 10)
    np.testing.assert_allclose(step[:, 0], full[:, 2], rtol=1e-4, atol=1e-5)


def test_mask_shape_mismatch(decoder, features):
    with pytest.raises(ShapeError):
        decoder(_context(), ar_mask(5), features)


def test_random_masked_rows_are_exactly_independent(decoder, features):
    rng = np.random.default_rng(7)
    for _ in range(100):
        sigma = rng.permutation(5) + 1
        mask = mask_from_permutation(sigma)
        row = int(rng.integers(5))
        blocked = np.flatnonzero(mask[row] != 0.0)
        if not blocked.size:
            continue
        base = decoder(_context(), mask, features).data
        changed = _context()
        changed[:, blocked] = rng.integers(0, 10, size=(2, blocked.size))
        perturbed = decoder(changed, mask, features).data
        assert np.abs(base[:, row] - perturbed[:, row]).max() == 0.0
