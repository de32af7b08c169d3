"""Search heuristics and the adapters that align their meaning across
algorithms.

A heuristic maps a molecule to the probability, in [0, 1], that expanding it
would yield a new successful synthesis plan for it.  Cost-based searches use
the negative log of the same quantity, and the OR-tree search scores partial
plans by the expected success if every open molecule were closed
independently with its heuristic probability; both adapters preserve the
joint-probability reading of a plan's value.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInputError


class Heuristic:
    """Deterministic, range-checked molecule scorer."""

    name = "heuristic"

    def evaluate(self, molecule: str) -> float:
        value = self._evaluate(molecule)
        if not 0.0 <= value <= 1.0:
            raise InvalidInputError(
                f"heuristic {self.name} returned {value} outside [0, 1]"
            )
        return value

    def _evaluate(self, molecule: str) -> float:  # pragma: no cover - abstract
        raise NotImplementedError


class OptimisticHeuristic(Heuristic):
    """Best possible value for every molecule (cost adapter: zero)."""

    name = "optimistic"

    def _evaluate(self, molecule: str) -> float:
        return 1.0


class DifficultyHeuristic(Heuristic):
    """Decreases linearly with a difficulty score in [1, 10]."""

    name = "difficulty"

    def __init__(self, scorer: Callable[[str], float]):
        self.scorer = scorer

    def _evaluate(self, molecule: str) -> float:
        return difficulty_h(molecule, self.scorer)


def optimistic() -> OptimisticHeuristic:
    return OptimisticHeuristic()


def difficulty_h(molecule: str, scorer: Callable[[str], float]) -> float:
    """h = 1 - (score - 1)/10 for a difficulty score in [1, 10]."""
    score = scorer(molecule)
    if not 1.0 <= score <= 10.0:
        raise InvalidInputError(f"difficulty score {score} outside [1, 10]")
    return 1.0 - (score - 1.0) / 10.0


def to_cost(h_value: float) -> float:
    """Probability-to-cost adapter: -ln(h), with h=0 mapping to +inf."""
    if not 0.0 <= h_value <= 1.0:
        raise InvalidInputError(f"heuristic value {h_value} outside [0, 1]")
    if h_value == 0.0:
        return math.inf
    return -math.log(h_value)


def mcts_partial_value(feasibility_bits: np.ndarray, buyable_bits: np.ndarray,
                       h_values: np.ndarray) -> float:
    """Expected success of a partial plan if open molecules close independently.

    ``feasibility_bits`` is (n_reactions, k) over the plan's reactions,
    ``buyable_bits`` is (n_molecules, k) over its open molecules and
    ``h_values`` the heuristic value of each open molecule.  Per scenario the
    plan needs every reaction feasible; a non-buyable molecule contributes
    its heuristic probability, a buyable one contributes 1.
    """
    k = feasibility_bits.shape[1] if feasibility_bits.size else buyable_bits.shape[1]
    if feasibility_bits.size:
        all_feasible = feasibility_bits.min(axis=0).astype(float)
    else:
        all_feasible = np.ones(k)
    value = all_feasible
    for row, h in zip(buyable_bits, h_values):
        value = value * np.where(row > 0, 1.0, h)
    return float(value.mean())


def by_name(name: str, scorer: Optional[Callable[[str], float]] = None) -> Heuristic:
    """Heuristic factory for configuration strings."""
    if name == "optimistic":
        return optimistic()
    if name == "difficulty":
        if scorer is None:
            raise InvalidInputError("the difficulty heuristic needs a scorer")
        return DifficultyHeuristic(scorer)
    raise InvalidInputError(f"unknown heuristic {name!r}")
