"""
Character tokenizer for decoder labels and contexts, and the text tokenizer
feeding the text encoder.

Character-token layout for a charset of n characters:
    [E] = 0, characters = 1..n, [B] = n + 1, [P] = n + 2
With the default 94-character charset the decoder head emits 95 classes
([E] plus the characters); [B] and [P] are input-only.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from dualstr.errors import CharsetError, ConfigError, LengthError

logger = logging.getLogger(__name__)

# Printable ASCII without space, 0x21..0x7E
TRAIN_CHARSET = "".join(chr(c) for c in range(0x21, 0x7F))
EVAL_CHARSET = "0123456789abcdefghijklmnopqrstuvwxyz"

MAX_LABEL_LENGTH = 25
TEXT_LENGTH = 16


def eval_filter(s: str, charset: str = EVAL_CHARSET) -> str:
    """Lowercase-fold and drop every character outside the evaluation charset."""
    allowed = set(charset)
    return "".join(ch for ch in s.lower() if ch in allowed)


def _validate_charset(name: str, charset: str) -> None:
    if not charset:
        raise ConfigError(f"{name} is empty")
    if len(set(charset)) != len(charset):
        raise ConfigError(f"{name} contains duplicate characters")


@dataclass(frozen=True)
class CharSequence:
    ids: np.ndarray
    length: int


@dataclass(frozen=True)
class TextSequence:
    ids: np.ndarray


class CharTokenizer:
    END = 0

    def __init__(
        self,
        charset: str = TRAIN_CHARSET,
        max_length: int = MAX_LABEL_LENGTH,
        eval_charset: str = EVAL_CHARSET,
    ):
        _validate_charset("train_charset", charset)
        _validate_charset("eval_charset", eval_charset)
        folded = set(charset.lower())
        if not set(eval_charset) <= folded:
            missing = "".join(sorted(set(eval_charset) - folded))
            raise ConfigError(
                f"eval_charset characters {missing!r} are not in the lowercase-folded train charset"
            )
        self.charset = charset
        self.eval_charset = eval_charset
        self.max_length = max_length
        self._index = {ch: i + 1 for i, ch in enumerate(charset)}
        self.begin_id = len(charset) + 1
        self.pad_id = len(charset) + 2

    @property
    def num_classes(self) -> int:
        """Decoder output classes: [E] plus every character."""
        return len(self.charset) + 1

    @property
    def vocab_size(self) -> int:
        return len(self.charset) + 3

    @property
    def seq_len(self) -> int:
        return self.max_length + 1

    def encode(self, word: str, as_target: bool, strict: bool = True) -> CharSequence:
        """Tokenize a word.

        Target form is chars + [E] + [P]-fill; context form is [B] + chars + [P]-fill.
        With strict=False unknown characters are dropped instead of raising.
        """
        chars = []
        for ch in word:
            idx = self._index.get(ch)
            if idx is None:
                if strict:
                    raise CharsetError(f"character {ch!r} in {word!r} is not in the charset")
                continue
            chars.append(idx)
        if len(chars) > self.max_length:
            raise LengthError(
                f"word {word!r} has {len(chars)} characters, the limit is {self.max_length}"
            )
        ids = np.full(self.seq_len, self.pad_id, dtype=np.int64)
        if as_target:
            ids[: len(chars)] = chars
            ids[len(chars)] = self.END
        else:
            ids[0] = self.begin_id
            ids[1 : len(chars) + 1] = chars
        return CharSequence(ids=ids, length=len(chars))

    def encode_batch(
        self, words: Sequence[str], as_target: bool, strict: bool = True
    ) -> np.ndarray:
        return np.stack([self.encode(w, as_target, strict).ids for w in words])

    def decode(self, ids_or_probs: "np.typing.ArrayLike") -> str:
        """Greedy read-out that stops at the first [E] or after max_length characters.

        [B] and [P] are skipped.
        """
        arr = np.asarray(ids_or_probs)
        ids = arr.argmax(axis=-1) if arr.ndim == 2 else arr
        out = []
        for token in ids.tolist():
            if token == self.END or len(out) == self.max_length:
                break
            if 1 <= token <= len(self.charset):
                out.append(self.charset[token - 1])
        return "".join(out)

    def decode_batch(self, batch: Iterable["np.typing.ArrayLike"]) -> list[str]:
        return [self.decode(row) for row in batch]

    def context_padding(self, ids: np.ndarray) -> np.ndarray:
        """True where a context position holds [P]."""
        return np.asarray(ids) == self.pad_id


class TextTokenizer:
    """Lower-cased character tokenizer for the text encoder."""

    PAD = 0
    SOS = 1
    EOS = 2
    UNK = 3

    def __init__(self, charset: str = EVAL_CHARSET, length: int = TEXT_LENGTH):
        _validate_charset("text charset", charset)
        if length < 3:
            raise ConfigError(f"text_length must be at least 3, got {length}")
        self.charset = charset
        self.length = length
        self._index = {ch: i + 4 for i, ch in enumerate(charset)}

    @property
    def vocab_size(self) -> int:
        return len(self.charset) + 4

    @property
    def pad_id(self) -> int:
        return self.PAD

    @property
    def sos_id(self) -> int:
        return self.SOS

    @property
    def eos_id(self) -> int:
        return self.EOS

    @property
    def unk_id(self) -> int:
        return self.UNK

    def encode(self, word: str) -> TextSequence:
        content = [self._index.get(ch, self.UNK) for ch in word.lower()]
        content = content[: self.length - 2]
        ids = np.full(self.length, self.PAD, dtype=np.int64)
        ids[0] = self.SOS
        ids[1 : len(content) + 1] = content
        ids[len(content) + 1] = self.EOS
        return TextSequence(ids=ids)

    def encode_batch(self, words: Sequence[str]) -> np.ndarray:
        return np.stack([self.encode(w).ids for w in words])
