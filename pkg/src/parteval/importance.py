"""Pixel attributions aggregated to part level, removal orders, threshold subsets."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import Aggregation, AttributionMap, ClassMode, Direction, PartAnnotation, PartSubset, normalize_subset
from .errors import ProtocolError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PartImportance:
    """Per-part importance scores for one (image, method, class-mode)."""

    image_id: str
    method_id: str
    class_mode: ClassMode
    values: Mapping[int, float]
    aggregation: Aggregation

    def __post_init__(self):
        values = {int(k): float(v) for k, v in self.values.items()}
        if not values:
            raise ProtocolError(f"importance for {self.image_id!r} has no parts")
        if any(not np.isfinite(v) for v in values.values()):
            raise ProtocolError(f"importance for {self.image_id!r} contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "class_mode", ClassMode(self.class_mode))
        object.__setattr__(self, "aggregation", Aggregation(self.aggregation))

    @property
    def part_ids(self) -> PartSubset:
        return tuple(sorted(self.values))


def aggregate(attr: AttributionMap, ann: PartAnnotation, mode: Aggregation) -> PartImportance:
    """Sum (or mean) of attribution over each part's pixels.

    Sums run in float64 regardless of raster dtype so results do not depend on
    chunking or thread count.
    """
    mode = Aggregation(mode)
    if attr.values.shape != ann.mask.shape:
        raise ProtocolError(
            f"attribution shape {attr.values.shape} does not match mask shape {ann.mask.shape} "
            f"for image {ann.image_id!r}"
        )
    mask = ann.mask.ravel()
    flat = attr.values.ravel().astype(np.float64)
    n_bins = int(mask.max()) + 1
    sums = np.bincount(mask, weights=flat, minlength=n_bins)
    counts = np.bincount(mask, minlength=n_bins)
    values: dict[int, float] = {}
    for part in ann.part_ids:
        total = float(sums[part])
        values[part] = total if mode is Aggregation.SUM_PER_PART else total / int(counts[part])
    return PartImportance(
        image_id=ann.image_id,
        method_id=attr.method_id,
        class_mode=attr.class_mode,
        values=values,
        aggregation=mode,
    )


def removal_order(pi: PartImportance, direction: Direction) -> tuple[int, ...]:
    """Part ids sorted by importance (ascending for least-first); ties by id."""
    direction = Direction(direction)
    reverse = direction is Direction.MOST_FIRST
    ordered = sorted(pi.values, key=lambda p: ((-pi.values[p]) if reverse else pi.values[p], p))
    return tuple(ordered)


def select_threshold_subset(pi: PartImportance, t: float, direction: Direction) -> PartSubset:
    """Shortest removal-order prefix covering at least fraction ``t`` of importance.

    Fractions are taken over negative-clamped importances so signed attributions
    keep the threshold well-defined; if everything clamps to zero the single
    first part in the order is removed so threshold metrics stay defined.
    """
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold {t} outside the open interval (0, 1)")
    order = removal_order(pi, direction)
    clamped = {p: max(v, 0.0) for p, v in pi.values.items()}
    if any(clamped[p] != pi.values[p] for p in clamped):
        logger.debug(
            "image %s method %s: negative importances clamped to 0 for threshold selection",
            pi.image_id, pi.method_id,
        )
    # Sum in removal order so the running total below reaches exactly `total`
    # on the last part; the final prefix then always satisfies any t < 1.
    total = sum(clamped[p] for p in order)
    if total <= 0.0:
        return normalize_subset(order[:1])
    cum = 0.0
    chosen: list[int] = []
    for part in order:
        chosen.append(part)
        cum += clamped[part]
        if cum / total >= t:
            break
    return normalize_subset(chosen)
