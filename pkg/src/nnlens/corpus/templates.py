"""Deterministic generators for the seven subject-verb agreement template tasks.

A template is a word pattern whose ``{slot}`` entries are filled from the
lexicon. Fillings of one condition are enumerated implicitly as a mixed-radix
number, so sampling ``k`` distinct sentences never materialises the full
product (NounPPAdv alone has ~270k fillings per condition).
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

from ..errors import GenerationError
from .container import Corpus, Sentence
from .lexicon import Lexicon

# slot -> lexicon category
SLOT_SOURCES = {
    "subj": "nouns",
    "attr": "nouns",
    "verb": "verbs",
    "prep": "prepositions",
    "name": "names",
    "adv": "adverbs",
    "adv2": "adverbs",
    "intens": "intensifiers",
    "conj": "conjunctions",
}
# slot -> slot whose entry it must differ from (same category)
DISTINCT_FROM = {"attr": "subj", "adv2": "adv"}
ATTRACTOR_SLOTS = ("attr", "name")


@dataclass(frozen=True)
class Template:
    name: str
    pattern: tuple[str, ...]
    conditions: tuple[str, ...]

    @property
    def slots(self) -> list[str]:
        return [p[1:-1] for p in self.pattern if p.startswith("{")]

    def position(self, slot: str) -> int:
        return self.pattern.index("{" + slot + "}")


LAKRETZ_TASKS: dict[str, Template] = {
    t.name: t
    for t in [
        Template("Simple", ("the", "{subj}", "{verb}"), ("S", "P")),
        Template("Adv", ("the", "{subj}", "{adv}", "{verb}"), ("S", "P")),
        Template("2Adv", ("the", "{subj}", "{intens}", "{adv}", "{verb}"), ("S", "P")),
        Template("CoAdv", ("the", "{subj}", "{adv}", "{conj}", "{adv2}", "{verb}"), ("S", "P")),
        # the intervening proper name is always singular
        Template("NamePP", ("the", "{subj}", "{prep}", "{name}", "{verb}"), ("SS", "PS")),
        Template("NounPP", ("the", "{subj}", "{prep}", "the", "{attr}", "{verb}"), ("SS", "SP", "PS", "PP")),
        Template(
            "NounPPAdv",
            ("the", "{subj}", "{prep}", "the", "{attr}", "{adv}", "{verb}"),
            ("SS", "SP", "PS", "PP"),
        ),
    ]
}


def _radix(template: Template, lexicon: Lexicon) -> list[int]:
    sizes = []
    for slot in template.slots:
        entries = getattr(lexicon, SLOT_SOURCES[slot])
        n = len(entries) - (1 if slot in DISTINCT_FROM else 0)
        if n <= 0:
            raise GenerationError(
                f"{template.name}: lexicon category {SLOT_SOURCES[slot]!r} is too small for slot {slot!r}"
            )
        sizes.append(n)
    return sizes


def count_fillings(template: Template, lexicon: Lexicon) -> int:
    """Distinct fillings per condition."""
    return math.prod(_radix(template, lexicon))


def _decode(index: int, template: Template, sizes: Sequence[int]) -> dict[str, int]:
    choice: dict[str, int] = {}
    for slot, n in zip(reversed(template.slots), reversed(sizes)):
        index, choice[slot] = divmod(index, n)
    for slot, other in DISTINCT_FROM.items():
        if slot in choice and choice[slot] >= choice[other]:
            choice[slot] += 1
    return choice


def _realise(template: Template, lexicon: Lexicon, condition: str, choice: Mapping[str, int]) -> Sentence:
    subj_num = 0 if condition[0] == "S" else 1
    attr_num = 0 if len(condition) < 2 or condition[1] == "S" else 1
    words: list[str] = []
    verb_correct = verb_wrong = ""
    for part in template.pattern:
        if not part.startswith("{"):
            words.append(part)
            continue
        slot = part[1:-1]
        entry = getattr(lexicon, SLOT_SOURCES[slot])[choice[slot]]
        if slot == "subj":
            words.append(entry[subj_num])
        elif slot == "attr":
            words.append(entry[attr_num])
        elif slot == "verb":
            verb_correct, verb_wrong = entry[subj_num], entry[1 - subj_num]
            words.append(verb_correct)
        else:
            words.append(entry)
    meta = {
        "task": template.name,
        "condition": condition,
        "subject_index": template.position("subj"),
        "verb_index": template.position("verb"),
        "verb_correct": verb_correct,
        "verb_wrong": verb_wrong,
        "attractor_indices": [template.position(s) for s in ATTRACTOR_SLOTS if s in template.slots],
    }
    return Sentence(tuple(words), meta)


def generate_task(template: Template, lexicon: Lexicon, seed: int, count: int) -> Corpus:
    if count < 1:
        raise GenerationError("per-task count must be at least 1")
    per_condition = count_fillings(template, lexicon)
    maximum = per_condition * len(template.conditions)
    if count > maximum:
        raise GenerationError(
            f"{template.name}: requested {count} sentences but the lexicon allows at most {maximum} distinct fillings"
        )
    base, extra = divmod(count, len(template.conditions))
    sizes = _radix(template, lexicon)
    sentences: list[Sentence] = []
    for k, condition in enumerate(template.conditions):
        quota = base + (1 if k < extra else 0)
        rng = random.Random(f"{seed}:{template.name}:{condition}")
        for idx in rng.sample(range(per_condition), quota):
            sentences.append(_realise(template, lexicon, condition, _decode(idx, template, sizes)))
    random.Random(f"{seed}:{template.name}:order").shuffle(sentences)
    return Corpus(sentences, template.name)


def generate_lakretz_tasks(
    lexicon: Lexicon,
    seed: int,
    per_task_count: int,
    tasks: Sequence[str] | None = None,
) -> dict[str, Corpus]:
    """Generate each requested task (all seven by default), condition-balanced."""
    names = list(tasks) if tasks is not None else list(LAKRETZ_TASKS)
    unknown = [n for n in names if n not in LAKRETZ_TASKS]
    if unknown:
        raise GenerationError(f"unknown task(s) {unknown}; available: {list(LAKRETZ_TASKS)}")
    return {n: generate_task(LAKRETZ_TASKS[n], lexicon, seed, per_task_count) for n in names}
