"""Attribution method descriptors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Union

from ..errors import ConfigError
from .shapley import EXACT_CAP, CoalitionPlan, cd_plan, exact_plan, sampling_plan


@dataclass(frozen=True)
class Exact:
    cap: int = EXACT_CAP
    name = "exact"

    def plan(self, G: int) -> CoalitionPlan:
        return exact_plan(G, self.cap)


@dataclass(frozen=True)
class Sampling:
    m: int = 64
    seed: int = 0
    name = "sampling"

    def plan(self, G: int) -> CoalitionPlan:
        return sampling_plan(G, self.m, self.seed)


@dataclass(frozen=True)
class CDPairwise:
    normalize: bool = True
    name = "cd"

    def plan(self, G: int) -> CoalitionPlan:
        return cd_plan(G, self.normalize)


AttributionMethod = Union[Exact, Sampling, CDPairwise]

_BY_NAME = {"exact": Exact, "sampling": Sampling, "cd": CDPairwise, "cd_pairwise": CDPairwise}


def make_method(choice: "str | AttributionMethod", **options: Any) -> AttributionMethod:
    """``make_method("sampling", m=200, seed=1)``; method objects pass through unchanged."""
    if isinstance(choice, (Exact, Sampling, CDPairwise)):
        return choice
    try:
        cls = _BY_NAME[str(choice).lower()]
    except KeyError:
        raise ConfigError(f"unknown attribution method {choice!r}; expected exact, sampling or cd") from None
    fields = cls.__dataclass_fields__
    return cls(**{k: v for k, v in options.items() if k in fields})


def method_json(method: AttributionMethod) -> Mapping[str, Any]:
    return {"name": method.name, **{k: getattr(method, k) for k in method.__dataclass_fields__}}
