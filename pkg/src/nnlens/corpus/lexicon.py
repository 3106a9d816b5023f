from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..errors import GenerationError

CATEGORIES = ("nouns", "verbs", "names", "prepositions", "adverbs", "intensifiers", "conjunctions")


@dataclass(frozen=True)
class Lexicon:
    """Word lists for the agreement templates.

    ``nouns`` are (singular, plural) pairs and ``verbs`` are (3rd-person
    singular, plural) pairs.
    """

    nouns: tuple[tuple[str, str], ...]
    verbs: tuple[tuple[str, str], ...]
    names: tuple[str, ...] = ()
    prepositions: tuple[str, ...] = ()
    adverbs: tuple[str, ...] = ()
    intensifiers: tuple[str, ...] = ()
    conjunctions: tuple[str, ...] = ("and",)

    def __post_init__(self):
        for cat in ("nouns", "verbs"):
            for pair in getattr(self, cat):
                if len(pair) != 2 or pair[0] == pair[1]:
                    raise GenerationError(f"{cat}: {pair!r} is not a (singular, plural) pair of distinct forms")
        words = self.all_words()
        bad = [w for w in words if not w or len(w.split()) != 1]
        if bad:
            raise GenerationError(f"lexicon entries must be single word tokens: {bad[:5]}")
        for cat in CATEGORIES:
            entries = getattr(self, cat)
            if len(set(entries)) != len(entries):
                raise GenerationError(f"duplicate entries in lexicon category {cat!r}")

    def all_words(self) -> list[str]:
        out = [w for pair in self.nouns for w in pair] + [w for pair in self.verbs for w in pair]
        for cat in ("names", "prepositions", "adverbs", "intensifiers", "conjunctions"):
            out.extend(getattr(self, cat))
        return out

    def to_json(self) -> dict:
        return {cat: [list(x) if isinstance(x, tuple) else x for x in getattr(self, cat)] for cat in CATEGORIES}

    @classmethod
    def from_json(cls, data: dict) -> "Lexicon":
        unknown = set(data) - set(CATEGORIES)
        if unknown:
            raise GenerationError(f"unknown lexicon categories: {sorted(unknown)}")
        kwargs = {}
        for cat in CATEGORIES:
            if cat not in data:
                continue
            if cat in ("nouns", "verbs"):
                kwargs[cat] = tuple(tuple(p) for p in data[cat])
            else:
                kwargs[cat] = tuple(data[cat])
        if "nouns" not in kwargs or "verbs" not in kwargs:
            raise GenerationError("lexicon needs at least 'nouns' and 'verbs'")
        return cls(**kwargs)


def load_lexicon(path: str | Path | None = None) -> Lexicon:
    """Load a lexicon JSON file, or the shipped default when ``path`` is None."""
    if path is None:
        text = resources.files("nnlens.corpus").joinpath("data/lexicon.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return Lexicon.from_json(json.loads(text))
