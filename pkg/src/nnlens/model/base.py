from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any, Mapping, NamedTuple, Sequence

import numpy as np

from .. import tensor as T
from ..corpus.vocab import Vocab
from ..errors import VocabularyError
from ..tensor import Tensor


class ActivationKey(NamedTuple):
    layer: int
    name: str

    def __str__(self) -> str:
        return f"{self.layer}:{self.name}"

    @classmethod
    def parse(cls, text: "str | ActivationKey | Sequence") -> "ActivationKey":
        if isinstance(text, ActivationKey):
            return text
        if isinstance(text, str):
            layer, _, name = text.partition(":")
            if not name:
                raise ValueError(f"activation key must look like '<layer>:<name>', got {text!r}")
            return cls(int(layer), name)
        layer, name = text
        return cls(int(layer), str(name))


class LanguageModel(ABC):
    """Interface shared by the recurrent and transformer language models.

    ``run`` is written purely in terms of :mod:`nnlens.tensor` operations, so
    it accepts anything that intercepts those operations (for instance a
    decomposed tensor during attribution) in place of the embedded input.
    """

    model_type: str = ""
    vocab: Vocab
    params: dict[str, Tensor]

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    @abstractmethod
    def num_layers(self) -> int: ...

    @property
    @abstractmethod
    def activation_names(self) -> list[ActivationKey]: ...

    @property
    def masked(self) -> bool:
        return False

    @property
    def recurrent(self) -> bool:
        return False

    @abstractmethod
    def config(self) -> dict[str, Any]:
        """Constructor arguments (JSON-serialisable)."""

    @abstractmethod
    def run(self, x, state=None, params: Mapping[str, Tensor] | None = None, collect: bool = True):
        """Embedded input ``(..., T, d)`` -> ``(logits (..., T, V), {ActivationKey: (..., T, dim)})``."""

    def check_ids(self, ids) -> np.ndarray:
        arr = np.asarray(ids, dtype=np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= self.vocab_size):
            bad = int(arr.max()) if arr.max() >= self.vocab_size else int(arr.min())
            raise VocabularyError(f"token id {bad} outside vocabulary of size {self.vocab_size}")
        return arr

    def embed(self, ids, params: Mapping[str, Tensor] | None = None) -> Tensor:
        p = params or self.params
        return T.getitem(p["embedding"], self.check_ids(ids))

    def forward(self, ids, state=None):
        """Logits ``T x V`` and every advertised activation (``T x dim``) for one sentence."""
        ids = self.check_ids(ids)
        return self.run(self.embed(ids), state=state)

    def replace_params(self, params: Mapping[str, Any]) -> "LanguageModel":
        clone = self.__class__.__new__(self.__class__)
        clone.__dict__.update(self.__dict__)
        clone.params = {k: Tensor(v) for k, v in params.items()}
        return clone
