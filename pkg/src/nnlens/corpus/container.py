from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

from ..errors import ContractError, CorpusFormatError
from .vocab import Vocab

REQUIRED_META = (
    "task",
    "condition",
    "subject_index",
    "verb_index",
    "verb_correct",
    "verb_wrong",
    "attractor_indices",
)


@dataclass(frozen=True)
class Sentence:
    words: tuple[str, ...]
    meta: Mapping[str, Any]

    @property
    def text(self) -> str:
        if not self.words:
            return ""
        first = self.words[0]
        return " ".join((first[:1].upper() + first[1:], *self.words[1:]))

    @property
    def subject_number(self) -> str:
        return self.meta["condition"][0]


@dataclass
class Corpus:
    """Ordered sentences, optionally bound to a vocabulary."""

    sentences: list[Sentence]
    name: str = ""
    vocab: Vocab | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[Sentence]:
        return iter(self.sentences)

    def __getitem__(self, i: int) -> Sentence:
        return self.sentences[i]

    def with_vocab(self, vocab: Vocab) -> "Corpus":
        return Corpus(self.sentences, self.name, vocab)

    def subset(self, indices: Sequence[int]) -> "Corpus":
        return Corpus([self.sentences[i] for i in indices], self.name, self.vocab)

    def token_ids(self, i: int, vocab: Vocab | None = None) -> list[int]:
        vocab = vocab or self.vocab
        if vocab is None:
            raise ContractError("corpus is not bound to a vocabulary")
        return vocab.encode(self.sentences[i].words)

    @staticmethod
    def concat(corpora: Sequence["Corpus"], name: str = "") -> "Corpus":
        sents = [s for c in corpora for s in c.sentences]
        vocab = corpora[0].vocab if corpora else None
        return Corpus(sents, name, vocab)


def validate_meta(meta: Mapping[str, Any], n_words: int, where: str = "") -> None:
    for key in REQUIRED_META:
        if key not in meta:
            raise CorpusFormatError(f"{where}missing meta field {key!r}")
    for key in ("subject_index", "verb_index"):
        if not isinstance(meta[key], int) or not 0 <= meta[key] < n_words:
            raise CorpusFormatError(f"{where}meta field {key!r} must be a position in the sentence")
    if meta["verb_correct"] == meta["verb_wrong"]:
        raise CorpusFormatError(f"{where}verb_correct and verb_wrong must differ")
    if not isinstance(meta["attractor_indices"], list):
        raise CorpusFormatError(f"{where}meta field 'attractor_indices' must be a list")


def _dump_line(sentence: Sentence) -> str:
    return json.dumps({"tokens": list(sentence.words), "meta": dict(sentence.meta)},
                      ensure_ascii=False, separators=(",", ":"))


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """One JSON object per line: ``{"tokens": [...], "meta": {...}}``."""
    text = "".join(_dump_line(s) + "\n" for s in corpus.sentences)
    Path(path).write_text(text, encoding="utf-8")


def load_corpus(path: str | Path, vocab: Vocab | None = None, name: str | None = None) -> Corpus:
    sentences = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}: "
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{where}malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "tokens" not in obj or "meta" not in obj:
                raise CorpusFormatError(f"{where}expected an object with 'tokens' and 'meta'")
            words = obj["tokens"]
            if not isinstance(words, list) or not all(isinstance(w, str) for w in words):
                raise CorpusFormatError(f"{where}'tokens' must be a list of strings")
            validate_meta(obj["meta"], len(words), where)
            sentences.append(Sentence(tuple(words), obj["meta"]))
    return Corpus(sentences, name if name is not None else Path(path).stem, vocab)
