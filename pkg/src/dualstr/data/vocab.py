"""Random word vocabularies with a disjoint held-out split."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dualstr.errors import CharsetError, ContractError, DatasetIOError
from dualstr.data.font import has_glyph
from dualstr.tokenizer import MAX_LABEL_LENGTH

logger = logging.getLogger(__name__)

DEFAULT_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


@dataclass(kw_only=True, frozen=True)
class Vocabularies:
    train: list[str]
    heldout: list[str]


def make_vocabularies(
    train_count: int,
    heldout_count: int,
    seed: int,
    min_length: int = 3,
    max_length: int = 8,
    alphabet: str = DEFAULT_ALPHABET,
    capitalize_fraction: float = 0.0,
) -> Vocabularies:
    """Draw train_count + heldout_count distinct words; the two lists never share a word.

    Distinctness is checked after lowercasing so that evaluation filtering
    cannot make a held-out word match a training word.
    """
    if not 1 <= min_length <= max_length <= MAX_LABEL_LENGTH:
        raise ContractError(f"invalid word length range {min_length}..{max_length}")
    for ch in alphabet:
        if not has_glyph(ch):
            raise CharsetError(f"alphabet character {ch!r} has no glyph")
    total = train_count + heldout_count
    rng = np.random.default_rng(seed)
    seen: set[str] = set()
    words: list[str] = []
    attempts = 0
    while len(words) < total:
        attempts += 1
        if attempts > 100 * total + 1000:
            raise ContractError(
                f"cannot draw {total} distinct words of length {min_length}..{max_length}"
            )
        length = int(rng.integers(min_length, max_length + 1))
        word = "".join(alphabet[i] for i in rng.integers(len(alphabet), size=length))
        if capitalize_fraction and rng.random() < capitalize_fraction:
            word = word.capitalize()
        if word.lower() in seen:
            continue
        seen.add(word.lower())
        words.append(word)
    logger.debug(f"Drew {total} words after {attempts} attempts")
    return Vocabularies(train=words[:train_count], heldout=words[train_count:])


def write_vocab(path: Path, words: list[str]) -> None:
    Path(path).write_text("".join(f"{w}\n" for w in words), encoding="utf-8")


def read_vocab(path: Path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(str(path), e.strerror or str(e))
    words = [line.strip() for line in text.splitlines() if line.strip()]
    if not words:
        raise DatasetIOError(str(path), "vocabulary is empty")
    return words
