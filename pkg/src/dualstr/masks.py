"""
Permutation-derived attention masks.

A mask of size n has columns [B], y1..y(n-1) (the decoder context) and rows
y1..y(n-1), [E] (the outputs). Entries are 0 (visible) or -inf (blocked).
Permutations are written 1-based over the character positions 1..n-1.
"""

import logging
from typing import Optional, Sequence

import numpy as np

from dualstr.errors import ContractError

logger = logging.getLogger(__name__)

NEG_INF = -np.inf


def _check_permutation(sigma: Sequence[int]) -> list[int]:
    order = [int(s) for s in sigma]
    if sorted(order) != list(range(1, len(order) + 1)):
        raise ContractError(f"{list(sigma)} is not a permutation of 1..{len(order)}")
    return order


def mask_from_permutation(sigma: Sequence[int]) -> np.ndarray:
    """Output sigma(k) sees [B] and exactly sigma(1)..sigma(k-1); [E] sees everything."""
    order = _check_permutation(sigma)
    n = len(order) + 1
    mask = np.full((n, n), NEG_INF)
    mask[:, 0] = 0.0
    mask[n - 1, :] = 0.0
    for k, pos in enumerate(order):
        for earlier in order[:k]:
            mask[pos - 1, earlier] = 0.0
    return mask


def ar_mask(n: int) -> np.ndarray:
    return mask_from_permutation(range(1, n))


def reverse_ar_mask(n: int) -> np.ndarray:
    return mask_from_permutation(range(n - 1, 0, -1))


def cloze_mask(n: int) -> np.ndarray:
    """Every output sees [B] and every character but itself."""
    if n < 2:
        raise ContractError(f"cloze_mask needs n >= 2, got {n}")
    mask = np.zeros((n, n))
    for row in range(n - 1):
        mask[row, row + 1] = NEG_INF
    return mask


def sample_training_masks(
    k: int,
    n: int,
    rng: np.random.Generator,
    pairing: bool = False,
) -> np.ndarray:
    """K masks: slot 0 left-to-right, slot 1 right-to-left, the rest random.

    With `pairing` every random permutation is followed by its reverse.
    Returns an array of shape [k, n, n].
    """
    if k < 2:
        raise ContractError(f"sample_training_masks needs k >= 2, got {k}")
    masks = [ar_mask(n), reverse_ar_mask(n)]
    while len(masks) < k:
        sigma = rng.permutation(n - 1) + 1
        masks.append(mask_from_permutation(sigma))
        if pairing and len(masks) < k:
            masks.append(mask_from_permutation(sigma[::-1]))
    return np.stack(masks)


def sample_batch_masks(
    k: int,
    n: int,
    rng: np.random.Generator,
    pairing: bool = False,
    batch: Optional[int] = None,
) -> np.ndarray:
    """Shared masks [k, n, n], or per-sample masks [batch, k, n, n]."""
    if batch is None:
        return sample_training_masks(k, n, rng, pairing)
    return np.stack([sample_training_masks(k, n, rng, pairing) for _ in range(batch)])


def with_key_padding(mask: np.ndarray, padding: np.ndarray) -> np.ndarray:
    """Combine a [n_q, n_k] or [batch, n_q, n_k] mask with [batch, n_k] key padding.

    The result broadcasts against [batch, heads, n_q, n_k].
    """
    pad = np.where(np.asarray(padding), NEG_INF, 0.0)[:, None, None, :]
    base = mask[None, None] if mask.ndim == 2 else mask[:, None]
    return base + pad


def visibility_order(mask: np.ndarray) -> list[int]:
    """Recover the permutation a mask was built from.

    Sorts output positions by how many characters they see and checks that
    each one sees exactly the positions ranked before it.
    """
    n = mask.shape[0]
    if mask.shape != (n, n) or n < 2:
        raise ContractError(f"mask must be square with n >= 2, got {mask.shape}")
    visible = mask == 0.0
    if not visible[:, 0].all() or not visible[n - 1].all():
        raise ContractError("column [B] and row [E] must be fully visible")
    seen = {pos: set(np.flatnonzero(visible[pos - 1, 1:]) + 1) for pos in range(1, n)}
    order = sorted(seen, key=lambda pos: len(seen[pos]))
    for rank, pos in enumerate(order):
        if seen[pos] != set(order[:rank]):
            raise ContractError(f"position {pos} does not follow a permutation prefix")
    return order


def render_mask(mask: np.ndarray) -> str:
    """Grid with '.' for visible and '#' for blocked entries."""
    return "\n".join("".join("." if v == 0.0 else "#" for v in row) for row in mask)
