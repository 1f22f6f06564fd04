"""Part-subset perturbation plans under a fixed per-image combination budget."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

from .core import PartSubset, normalize_subset
from .errors import PlanError

DEFAULT_BUDGET = 32


@dataclass(frozen=True)
class PerturbationPlan:
    """Ordered list of non-empty part subsets to perturb for one image."""

    image_id: str
    subsets: tuple[PartSubset, ...]
    budget: int

    def __post_init__(self):
        if self.budget < 1:
            raise PlanError(f"budget must be positive, got {self.budget}")
        subsets = tuple(normalize_subset(s) for s in self.subsets)
        if len(set(subsets)) != len(subsets):
            raise PlanError(f"plan for {self.image_id!r} contains duplicate subsets")
        if any(not s for s in subsets):
            raise PlanError(f"plan for {self.image_id!r} contains an empty subset")
        if len(subsets) > self.budget:
            raise PlanError(
                f"plan for {self.image_id!r} has {len(subsets)} subsets, over budget {self.budget}"
            )
        object.__setattr__(self, "subsets", subsets)

    @property
    def is_complete(self) -> bool:
        parts = set()
        for s in self.subsets:
            parts.update(s)
        return len(self.subsets) == 2 ** len(parts) - 1


def enumerate_plan(part_ids: Iterable[int], budget: int = DEFAULT_BUDGET, *, image_id: str = "") -> PerturbationPlan:
    """All non-empty subsets ordered by (size, lexicographic), truncated to ``budget``.

    Smaller subsets come first so every singleton survives truncation; a budget
    below the part count would leave single deletions undefined and is an error.
    """
    parts = normalize_subset(part_ids)
    if not parts:
        raise PlanError("cannot plan for an image with no parts")
    if budget < len(parts):
        raise PlanError(
            f"budget {budget} below part count {len(parts)}; singleton coverage impossible"
        )
    subsets: list[PartSubset] = []
    for size in range(1, len(parts) + 1):
        for combo in combinations(parts, size):
            subsets.append(combo)
            if len(subsets) == budget:
                return PerturbationPlan(image_id=image_id, subsets=tuple(subsets), budget=budget)
    return PerturbationPlan(image_id=image_id, subsets=tuple(subsets), budget=budget)


def required_prefix_subsets(order: Sequence[int]) -> list[PartSubset]:
    """Cumulative prefixes {o1}, {o1,o2}, ... needed to perturb parts in ``order``."""
    if len(set(order)) != len(order):
        raise PlanError(f"removal order {tuple(order)} contains duplicates")
    prefixes: list[PartSubset] = []
    acc: list[int] = []
    for part in order:
        acc.append(int(part))
        prefixes.append(normalize_subset(acc))
    return prefixes
