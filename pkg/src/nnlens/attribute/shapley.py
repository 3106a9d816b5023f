"""Shapley estimators over coalition games.

Each estimator is a :class:`CoalitionPlan`: the list of coalitions whose
values it needs (as bitmasks over ``G`` players) plus a reduction that turns
those values into one value per player. The same plan serves the callable
game API below and the decomposed forward pass, which evaluates all of a
plan's coalitions at once.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError

EXACT_CAP = 12

Game = Callable[[frozenset], "np.ndarray | float"]


def members(mask: int, G: int) -> frozenset:
    return frozenset(g for g in range(G) if mask >> g & 1)


@dataclass(frozen=True, eq=False)
class CoalitionPlan:
    """Coalitions to evaluate (``masks[0]`` is always the empty coalition) and how to combine them."""

    G: int
    masks: tuple[int, ...]
    combine: Callable[[np.ndarray], np.ndarray]  # (K, *s) values -> (G, *s) attributions

    @property
    def size(self) -> int:
        return len(self.masks)

    @property
    def empty_index(self) -> int:
        return 0

    @property
    def full_index(self) -> int:
        return self.masks.index((1 << self.G) - 1)

    def membership(self) -> np.ndarray:
        """``(K, G)`` 0/1 matrix; row k marks the members of coalition k."""
        m = np.array(self.masks, dtype=np.int64)
        return ((m[:, None] >> np.arange(self.G)) & 1).astype(np.float64)

    def evaluate(self, game: Game) -> np.ndarray:
        return np.stack([np.asarray(game(members(mask, self.G)), dtype=np.float64) for mask in self.masks])


def _check_players(G: int) -> None:
    if G < 1:
        raise ContractError(f"a game needs at least one player, got G={G}")


@lru_cache(maxsize=64)
def exact_plan(G: int, cap: int = EXACT_CAP) -> CoalitionPlan:
    _check_players(G)
    if G > cap:
        raise ContractError(f"exact Shapley values are capped at {cap} groups, got {G}")
    n = 1 << G
    sizes = np.array([bin(m).count("1") for m in range(n)])
    weight = np.array([factorial(s) * factorial(G - s - 1) / factorial(G) for s in range(G)])
    without = [np.array([m for m in range(n) if not m >> g & 1]) for g in range(G)]
    weights = [weight[sizes[idx]] for idx in without]

    def combine(values: np.ndarray) -> np.ndarray:
        out = []
        for g in range(G):
            idx = without[g]
            diff = values[idx | (1 << g)] - values[idx]
            out.append(np.tensordot(weights[g], diff, axes=(0, 0)))
        return np.stack(out)

    return CoalitionPlan(G, tuple(range(n)), combine)


def sample_permutations(G: int, m: int, seed: int) -> np.ndarray:
    if m < 1:
        raise ContractError(f"need at least one permutation, got m={m}")
    rng = np.random.default_rng(seed)
    return np.stack([rng.permutation(G) for _ in range(m)])


def permutation_plan(G: int, permutations: np.ndarray) -> CoalitionPlan:
    """Average marginal contributions along the given player orderings."""
    _check_players(G)
    perms = np.asarray(permutations, dtype=np.int64)
    if perms.ndim != 2 or perms.shape[1] != G or any(sorted(p) != list(range(G)) for p in perms.tolist()):
        raise ContractError(f"permutations must be rows of a permutation of range({G})")
    index = {0: 0}
    before = np.empty(perms.shape, dtype=np.int64)  # [perm, player] -> coalition index before the player joins
    after = np.empty(perms.shape, dtype=np.int64)
    for r, perm in enumerate(perms):
        mask = 0
        for g in perm:
            before[r, g] = index[mask]
            mask |= 1 << int(g)
            after[r, g] = index.setdefault(mask, len(index))
    masks = tuple(sorted(index, key=index.get))

    def combine(values: np.ndarray) -> np.ndarray:
        return np.mean(values[after] - values[before], axis=0)

    return CoalitionPlan(G, masks, combine)


@lru_cache(maxsize=64)
def sampling_plan(G: int, m: int, seed: int) -> CoalitionPlan:
    return permutation_plan(G, sample_permutations(G, m, seed))


def cd_combine(values: np.ndarray, single: np.ndarray, rest: np.ndarray, G: int, normalize: bool) -> np.ndarray:
    empty, full = values[0], values[1]
    phi = 0.5 * ((values[single] - empty) + (full - values[rest]))
    if not normalize:
        return phi
    total = full - empty
    s = phi.sum(axis=0)
    scale_ok = np.abs(s) > 1e-12 * (1.0 + np.abs(phi).sum(axis=0))
    ratio = np.divide(total, s, out=np.ones_like(s), where=scale_ok)
    # where the pairwise values cancel, share the residual equally instead of rescaling
    return np.where(scale_ok, phi * ratio, phi + (total - s) / G)


@lru_cache(maxsize=64)
def cd_plan(G: int, normalize: bool = True) -> CoalitionPlan:
    """Each group against the aggregate of all others, as a two-player game."""
    _check_players(G)
    full = (1 << G) - 1
    index = {0: 0, full: 1}
    single = np.array([index.setdefault(1 << g, len(index)) for g in range(G)])
    rest = np.array([index.setdefault(full & ~(1 << g), len(index)) for g in range(G)])
    masks = tuple(sorted(index, key=index.get))
    return CoalitionPlan(G, masks, lambda values: cd_combine(values, single, rest, G, normalize))


def exact_shapley(game: Game, G: int, cap: int = EXACT_CAP) -> np.ndarray:
    """phi_g = sum over C without g of |C|!(G-|C|-1)!/G! * (game(C + g) - game(C)); shape ``(G, *value)``."""
    plan = exact_plan(G, cap)
    return plan.combine(plan.evaluate(game))


def sampled_shapley(game: Game, G: int, m: int, seed: int = 0,
                    permutations: Sequence[Sequence[int]] | None = None) -> np.ndarray:
    """Mean marginal contribution over ``m`` seeded random orderings (or the given ones)."""
    perms = sample_permutations(G, m, seed) if permutations is None else np.asarray(permutations)
    plan = permutation_plan(G, perms)
    return plan.combine(plan.evaluate(game))


def cd_pairwise(game: Game, G: int, g: int | None = None, normalize: bool = True) -> np.ndarray:
    """Pairwise (group vs rest) Shapley values; rescaled to sum to game(N) - game(empty) when ``normalize``."""
    plan = cd_plan(G, normalize)
    phi = plan.combine(plan.evaluate(game))
    return phi if g is None else phi[g]
