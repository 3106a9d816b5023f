from __future__ import annotations

import hashlib
import json
from typing import Iterable, Sequence

from ..errors import VocabularyError

UNK, PAD, MASK, EOS = "<unk>", "<pad>", "<mask>", "<eos>"
SPECIALS = (UNK, PAD, MASK, EOS)


class Vocab:
    """Token <-> id bijection. Ids 0..3 are always ``<unk> <pad> <mask> <eos>``."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise VocabularyError(f"vocabulary must start with {SPECIALS}, got {tokens[:4]}")
        if len(set(tokens)) != len(tokens):
            dupes = sorted({t for t in tokens if tokens.count(t) > 1})
            raise VocabularyError(f"duplicate tokens in vocabulary: {dupes[:5]}")
        self._tokens = tokens
        self._ids = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, words: Iterable[str], extra: Iterable[str] = (".",)) -> "Vocab":
        """Specials, then ``extra``, then the remaining words sorted."""
        extra = [w for w in extra if w not in SPECIALS]
        rest = sorted(set(words) - set(SPECIALS) - set(extra))
        return cls([*SPECIALS, *extra, *rest])

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    def __iter__(self):
        return iter(self._tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._tokens == other._tokens

    def index(self, word: str) -> int:
        """Id of ``word``; raises for out-of-vocabulary words."""
        try:
            return self._ids[word]
        except KeyError:
            raise VocabularyError(f"{word!r} is not in the vocabulary") from None

    def get(self, word: str) -> int:
        return self._ids.get(word, 0)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self._ids.get(w, 0) for w in words]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._tokens[i] for i in ids]

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def pad_id(self) -> int:
        return 1

    @property
    def mask_id(self) -> int:
        return 2

    @property
    def eos_id(self) -> int:
        return 3

    def to_list(self) -> list[str]:
        return list(self._tokens)

    def fingerprint(self) -> str:
        payload = json.dumps(self._tokens, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def __repr__(self) -> str:
        return f"Vocab(size={len(self)})"


def tokenize(vocab: Vocab, text: str) -> list[int]:
    """Whitespace tokenisation; words are lower-cased unless only the cased form
    is known (proper names). Unknown words map to ``<unk>``."""
    ids = []
    for word in text.split():
        lower = word.lower()
        if lower in vocab:
            ids.append(vocab.index(lower))
        elif word in vocab:
            ids.append(vocab.index(word))
        else:
            ids.append(vocab.unk_id)
    return ids
