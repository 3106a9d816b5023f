"""Attribution of target logits to groups of input tokens."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ..errors import ContractError, VocabularyError
from ..model.base import LanguageModel
from ..model.lstm import LstmLm, init_states_from_phrase
from .decomposed import DecomposedTensor
from .methods import AttributionMethod, make_method, method_json

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlayerPartition:
    """Group index for every token position."""

    assignment: tuple[int, ...]
    num_groups: int

    def __post_init__(self):
        if self.num_groups < 1:
            raise ContractError("a partition needs at least one group")
        bad = [g for g in self.assignment if not 0 <= g < self.num_groups]
        if bad:
            raise ContractError(f"group ids {bad} outside 0..{self.num_groups - 1}")

    @classmethod
    def per_token(cls, length: int) -> "PlayerPartition":
        return cls(tuple(range(length)), max(length, 1))

    @classmethod
    def of(cls, groups: Sequence[int], num_groups: int | None = None) -> "PlayerPartition":
        groups = tuple(int(g) for g in groups)
        return cls(groups, num_groups if num_groups is not None else (max(groups) + 1 if groups else 1))

    @property
    def G(self) -> int:
        return self.num_groups

    def members(self, g: int) -> list[int]:
        return [p for p, a in enumerate(self.assignment) if a == g]


@dataclass
class Attribution:
    tokens: list[str]
    target: int
    target_token: str
    position: int
    full_logit: float
    contributions: list[float]
    bias: float
    groups: list[list[int]]
    method: dict[str, Any] = field(default_factory=dict)

    @property
    def efficiency_gap(self) -> float:
        return self.full_logit - (float(np.sum(self.contributions)) + self.bias)

    def group_label(self, g: int) -> str:
        return " ".join(self.tokens[p] for p in self.groups[g]) or f"<group {g}>"

    def to_json(self) -> dict[str, Any]:
        return {
            "tokens": self.tokens,
            "target": self.target_token,
            "target_id": self.target,
            "position": self.position,
            "full_logit": self.full_logit,
            "contributions": [
                {"group": g, "positions": self.groups[g], "label": self.group_label(g), "value": v}
                for g, v in enumerate(self.contributions)
            ],
            "bias": self.bias,
            "method": dict(self.method),
        }


def render_text(attr: Attribution, width: int = 24) -> str:
    """One line per group with a signed bar, then the bias and the total."""
    rows = [(attr.group_label(g), v) for g, v in enumerate(attr.contributions)] + [("<bias>", attr.bias)]
    scale = max((abs(v) for _, v in rows), default=0.0) or 1.0
    label_w = max(len(r[0]) for r in rows)
    lines = [f"target {attr.target_token!r} at position {attr.position}: logit {attr.full_logit:+.4f}"]
    for label, v in rows:
        n = int(round(abs(v) / scale * width))
        bar = ("+" if v >= 0 else "-") * n
        lines.append(f"  {label.ljust(label_w)}  {v:+9.4f}  {bar}")
    total = float(np.sum(attr.contributions)) + attr.bias
    lines.append(f"  {'sum'.ljust(label_w)}  {total:+9.4f}")
    return "\n".join(lines)


def _readout_position(model: LanguageModel, ids: np.ndarray, position: int | None) -> int:
    if position is not None:
        return position
    if model.masked:
        where = np.flatnonzero(ids == model.vocab.mask_id)
        if len(where) != 1:
            raise ContractError(f"masked models need exactly one mask token to attribute, found {len(where)}")
        return int(where[0])
    return len(ids) - 1


def initial_embedding(model: LanguageModel, ids: np.ndarray, partition: PlayerPartition,
                      method: AttributionMethod, form: str) -> DecomposedTensor:
    """Token ``p`` contributes its whole embedding to group ``partition(p)``; nothing is static."""
    emb = np.asarray(model.embed(ids).data)  # (T, d)
    G = partition.G
    onehot = np.zeros((G, len(ids)))
    onehot[list(partition.assignment), np.arange(len(ids))] = 1.0
    if form == "coalition":
        present = method.plan(G).membership() @ onehot  # (K, T) 0/1
        return DecomposedTensor(present[:, :, None] * emb[None], method, G, "coalition")
    slots = np.concatenate([onehot[:, :, None] * emb[None], np.zeros((1,) + emb.shape)])
    return DecomposedTensor(slots, method, G, "slots")


def decompose_logits(model: LanguageModel, tokens: Sequence[int], partition: PlayerPartition | None = None,
                     method: "AttributionMethod | str" = "exact", form: str = "coalition", state=None):
    """Decomposed logits ``(G + 1, T, V)`` slots and the ordinary logits ``(T, V)``."""
    ids = model.check_ids(tokens)
    if len(ids) == 0:
        raise ContractError("cannot attribute an empty token sequence")
    partition = partition or PlayerPartition.per_token(len(ids))
    if len(partition.assignment) != len(ids):
        raise ContractError(f"partition covers {len(partition.assignment)} positions, sentence has {len(ids)}")
    method = make_method(method)
    if state is None and isinstance(model, LstmLm):
        state = init_states_from_phrase(model, model.init_phrase)
    x = initial_embedding(model, ids, partition, method, form)
    logits, _ = model.run(x, state=state, collect=False)
    plain, _ = model.run(model.embed(ids), state=state, collect=False)
    return logits, np.asarray(plain.data)


def decompose_forward(
    model: LanguageModel,
    tokens: Sequence[int],
    partition: PlayerPartition | Sequence[int] | None = None,
    method: "AttributionMethod | str" = "exact",
    targets: Sequence[int] | None = None,
    form: str = "coalition",
    position: int | None = None,
    state=None,
) -> list[Attribution]:
    """Attribute target logits at the read-out position to token groups.

    The read-out position is the last token for causal and recurrent models
    and the mask token for masked models. ``targets`` defaults to the
    model's top prediction there.
    """
    ids = model.check_ids(tokens)
    if partition is not None and not isinstance(partition, PlayerPartition):
        partition = PlayerPartition.of(partition)
    partition = partition or PlayerPartition.per_token(len(ids))
    method = make_method(method)
    logits, plain = decompose_logits(model, ids, partition, method, form, state)
    pos = _readout_position(model, ids, position)
    slots = logits.slots[:, pos]  # (G + 1, V)
    if targets is None:
        targets = [int(np.argmax(plain[pos]))]
    words = model.vocab.decode(ids)
    groups = [partition.members(g) for g in range(partition.G)]
    out = []
    for t in targets:
        t = int(t)
        if not 0 <= t < model.vocab_size:
            raise VocabularyError(f"target id {t} outside vocabulary of size {model.vocab_size}")
        attr = Attribution(words, t, model.vocab.token(t), pos, float(plain[pos, t]),
                           [float(v) for v in slots[:-1, t]], float(slots[-1, t]), groups,
                           {**method_json(method), "form": form})
        log.debug("attribution for %s: efficiency gap %.3g", attr.target_token, attr.efficiency_gap)
        out.append(attr)
    return out
