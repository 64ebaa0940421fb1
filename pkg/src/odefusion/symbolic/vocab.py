"""Token vocabulary for the symbolic modality.

Words: operators, sign words, all mantissas of the chosen width, exponent
words E-100..E100, variables u_1..u_d, the dimension separator "|", the
coefficient placeholder, and the special framing tokens.  Word <-> id is
a fixed bijection; sequences serialize either as whitespace-joined word
strings (human-readable) or as integer id arrays (model-facing).
"""

from __future__ import annotations

import hashlib

import numpy as np

from .floats import EXP_LIMIT
from .tree import BINARY_OPS, MAX_DIM, UNARY_OPS

PAD_WORD = "<pad>"
SOS_WORD = "<sos>"
EOS_WORD = "<eos>"
SEP_WORD = "|"
PLACEHOLDER_WORD = "<c>"
SIGN_WORDS = ("+", "-")


class UnknownWord(KeyError):
    pass


class Vocabulary:
    def __init__(self, d_max: int = MAX_DIM, mantissa_len: int = 3):
        if not 1 <= d_max <= MAX_DIM:
            raise ValueError(f"d_max must be in 1..{MAX_DIM}")
        self.d_max = d_max
        self.mantissa_len = mantissa_len
        words = [PAD_WORD, SOS_WORD, EOS_WORD, SEP_WORD, PLACEHOLDER_WORD]
        words += list(BINARY_OPS) + list(UNARY_OPS)
        words += list(SIGN_WORDS)
        words += [str(m) for m in range(10 ** mantissa_len)]
        words += [f"E{e}" for e in range(-EXP_LIMIT, EXP_LIMIT + 1)]
        words += [f"u_{i}" for i in range(1, d_max + 1)]
        self.id_to_word: list[str] = words
        self.word_to_id: dict[str, int] = {w: i for i, w in enumerate(words)}
        assert len(self.word_to_id) == len(words), "duplicate word"

    def __len__(self) -> int:
        return len(self.id_to_word)

    @property
    def pad_id(self) -> int:
        return self.word_to_id[PAD_WORD]

    @property
    def sos_id(self) -> int:
        return self.word_to_id[SOS_WORD]

    @property
    def eos_id(self) -> int:
        return self.word_to_id[EOS_WORD]

    def encode(self, words, sos: bool = False, eos: bool = False) -> np.ndarray:
        ids = []
        if sos:
            ids.append(self.sos_id)
        for w in words:
            try:
                ids.append(self.word_to_id[w])
            except KeyError:
                raise UnknownWord(w) from None
        if eos:
            ids.append(self.eos_id)
        return np.asarray(ids, dtype=np.int32)

    def decode(self, ids, strip_special: bool = True) -> list[str]:
        words = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.id_to_word):
                raise UnknownWord(i)
            w = self.id_to_word[i]
            if strip_special and w in (PAD_WORD, SOS_WORD, EOS_WORD):
                continue
            words.append(w)
        return words

    def hash(self) -> str:
        """Stable digest of the word list, recorded in artifact headers."""
        h = hashlib.sha256("\n".join(self.id_to_word).encode())
        return h.hexdigest()[:16]


def words_to_string(words) -> str:
    return " ".join(words)


def string_to_words(s: str) -> list[str]:
    return s.split()
