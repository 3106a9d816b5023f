"""Targeted syntactic evaluation on agreement templates.

An item is correct when the logit of the correct verb form is strictly
greater than the logit of the wrong form at the verb position. Since softmax
is monotone this is the same decision as comparing probabilities; a tie
counts as an error.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .corpus.container import Corpus
from .corpus.vocab import Vocab
from .errors import ContractError
from .model.base import LanguageModel
from .model.lstm import LstmLm, init_states_from_phrase

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalItem:
    prefix: tuple[int, ...]  # ids before the verb
    tokens: tuple[int, ...]
    verb_position: int
    v_correct: int
    v_wrong: int
    condition: str
    mask_position: int | None = None  # masked evaluation only; defaults to verb_position

    def __post_init__(self):
        if self.v_correct == self.v_wrong:
            raise ContractError("correct and wrong verb forms must differ")


@dataclass
class ConditionScore:
    total: int = 0
    correct: int = 0

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0


@dataclass
class TaskResult:
    conditions: dict[str, ConditionScore] = field(default_factory=dict)
    dropped: int = 0  # items removed by the out-of-vocabulary verb filter
    generated: int = 0

    @property
    def evaluated(self) -> int:
        return sum(c.total for c in self.conditions.values())

    def accuracy(self, condition: str) -> float:
        return self.conditions[condition].accuracy

    def to_json(self) -> dict[str, Any]:
        return {
            "conditions": {k: {"total": c.total, "correct": c.correct, "accuracy": c.accuracy}
                           for k, c in sorted(self.conditions.items())},
            "dropped": self.dropped,
            "generated": self.generated,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "TaskResult":
        conds = {k: ConditionScore(v["total"], v["correct"]) for k, v in data["conditions"].items()}
        return cls(conds, data["dropped"], data["generated"])


def make_items(vocab: Vocab, corpus: Corpus) -> tuple[list[EvalItem], int]:
    """Evaluation items for ``corpus`` plus the number dropped because a verb form is OOV."""
    items, dropped = [], 0
    for s in corpus:
        if s.meta["verb_correct"] not in vocab or s.meta["verb_wrong"] not in vocab:
            dropped += 1
            continue
        correct, wrong = vocab.index(s.meta["verb_correct"]), vocab.index(s.meta["verb_wrong"])
        ids = tuple(vocab.encode(s.words))
        v = s.meta["verb_index"]
        items.append(EvalItem(ids[:v], ids, v, correct, wrong, s.meta["condition"]))
    return items, dropped


def _check_item(model: LanguageModel, item: EvalItem) -> None:
    unk = model.vocab.unk_id
    for vid in (item.v_correct, item.v_wrong):
        if vid == unk or not 0 <= vid < model.vocab_size:
            raise ContractError(f"verb id {vid} is out of vocabulary; filter such items before evaluation")


def _score(result: TaskResult, item: EvalItem, logits: np.ndarray) -> None:
    entry = result.conditions.setdefault(item.condition, ConditionScore())
    entry.total += 1
    entry.correct += int(logits[item.v_correct] > logits[item.v_wrong])


def _as_items(model, task) -> tuple[list[EvalItem], int, int]:
    if isinstance(task, Corpus):
        items, dropped = make_items(model.vocab, task)
        return items, dropped, len(task)
    items = list(task)
    return items, 0, len(items)


def evaluate_recurrent(model: LanguageModel, task: Corpus | Sequence[EvalItem], state=None) -> TaskResult:
    """Score each item from the logits after reading the prefix up to the verb.

    LSTMs start every item from the state left by their context phrase.
    """
    if model.masked:
        raise ContractError("evaluate_recurrent needs a causal or recurrent model; use evaluate_masked")
    items, dropped, generated = _as_items(model, task)
    if state is None and isinstance(model, LstmLm):
        state = init_states_from_phrase(model, model.init_phrase)
    result = TaskResult(dropped=dropped, generated=generated)
    for item in items:
        _check_item(model, item)
        if not item.prefix:
            raise ContractError("item has an empty prefix; the verb cannot be predicted")
        logits, _ = model.forward(item.prefix, state=state)
        _score(result, item, logits.data[-1])
    return result


def evaluate_masked(model: LanguageModel, task: Corpus | Sequence[EvalItem]) -> TaskResult:
    """Replace the verb by the mask token and score the logits at that position."""
    if not model.masked:
        raise ContractError("evaluate_masked needs a model trained in masked mode")
    items, dropped, generated = _as_items(model, task)
    result = TaskResult(dropped=dropped, generated=generated)
    mask_id = model.vocab.mask_id
    for item in items:
        _check_item(model, item)
        pos = item.verb_position if item.mask_position is None else item.mask_position
        if pos != item.verb_position:
            raise ContractError(f"mask position {pos} is not the verb position {item.verb_position}")
        ids = list(item.tokens)
        ids[pos] = mask_id
        logits, _ = model.forward(ids)
        _score(result, item, logits.data[pos])
    return result


def evaluate(model: LanguageModel, task) -> TaskResult:
    return evaluate_masked(model, task) if model.masked else evaluate_recurrent(model, task)


@dataclass
class ConditionTable:
    models: list[str]
    rows: list[tuple[str, str, list[float | None]]]  # (task, condition, accuracy per model)
    results: dict[str, dict[str, TaskResult]]

    def to_json(self) -> dict[str, Any]:
        return {m: {t: r.to_json() for t, r in sorted(tasks.items())} for m, tasks in sorted(self.results.items())}

    def to_text(self) -> str:
        if not self.rows:
            return ""
        head = ["Corpus", "Condition", *self.models]
        body = [[t, c, *("-" if a is None else f"{100 * a:.1f}" for a in accs)] for t, c, accs in self.rows]
        widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
        fmt = lambda r: "  ".join(x.ljust(w) if i < 2 else x.rjust(w) for i, (x, w) in enumerate(zip(r, widths)))
        return "\n".join([fmt(head), "  ".join("-" * w for w in widths), *map(fmt, body)])


def condition_table(results: Mapping[str, Any], model_name: str = "model") -> ConditionTable:
    """Rows per (task, condition), one accuracy column per model.

    ``results`` maps task -> TaskResult for a single model, or
    model -> task -> TaskResult for several.
    """
    if results and all(isinstance(v, TaskResult) for v in results.values()):
        results = {model_name: dict(results)}
    results = {m: dict(t) for m, t in results.items()}
    models = sorted(results)
    keys = sorted({(t, c) for tasks in results.values() for t, r in tasks.items() for c in r.conditions})
    rows = []
    for task, cond in keys:
        accs = []
        for m in models:
            r = results[m].get(task)
            accs.append(r.conditions[cond].accuracy if r is not None and cond in r.conditions else None)
        rows.append((task, cond, accs))
    return ConditionTable(models, rows, results)


def table_from_json(data: Mapping[str, Any]) -> ConditionTable:
    return condition_table({m: {t: TaskResult.from_json(r) for t, r in tasks.items()} for m, tasks in data.items()})


def dumps_table(table: ConditionTable) -> str:
    return json.dumps(table.to_json(), indent=1, sort_keys=True) + "\n"
