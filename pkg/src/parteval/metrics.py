"""Faithfulness metrics: preservation/deletion checks, single deletion, perturbation curves."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .core import (
    AccuracyReference,
    Aggregation,
    ClassMode,
    CoveragePolicy,
    Direction,
    ImageRecord,
    PartSubset,
    ScoreFn,
    class_score,
    predicted_class,
    subset_key,
)
from .errors import CoverageError, EngineError, ProtocolError
from .importance import PartImportance, removal_order, select_threshold_subset
from .planner import required_prefix_subsets


class MetricId(str, Enum):
    PC = "PC"
    SD = "SD"
    DC = "DC"
    PERTURB_POSITIVE = "PerturbPositive"
    PERTURB_NEGATIVE = "PerturbNegative"


LEVEL_BINS = tuple(round(0.1 * k, 1) for k in range(1, 10))


@dataclass(frozen=True)
class MetricResult:
    """One metric score (percent) for a (method, class-mode) pair."""

    metric_id: MetricId
    method_id: str
    class_mode: ClassMode
    value: float
    n_evaluated: int
    n_skipped: int
    per_threshold: Mapping[float, float] | None = None
    per_level: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if not 0.0 <= self.value <= 100.0:
            raise EngineError(f"metric value {self.value} outside [0, 100]")
        if self.n_evaluated < 0 or self.n_skipped < 0:
            raise EngineError("negative evaluation counts")
        for series in (self.per_threshold or {}).values():
            if not 0.0 <= series <= 100.0:
                raise EngineError(f"per-threshold value {series} outside [0, 100]")
        for _, acc in self.per_level or ():
            if not 0.0 <= acc <= 100.0:
                raise EngineError(f"per-level value {acc} outside [0, 100]")


def _percent(count: int, n: int) -> float:
    # Multiply before dividing: (100.0*a)/n + (100.0*(n-a))/n == 100.0 holds
    # bit-exactly in IEEE-754, which the PC/DC complement identity relies on.
    return (100.0 * count) / n


def _pis_signature(pis: Mapping[str, PartImportance]) -> tuple[str, ClassMode, Aggregation]:
    if not pis:
        raise EngineError("empty part-importance mapping; nothing to evaluate")
    sigs = {(pi.method_id, pi.class_mode, pi.aggregation) for pi in pis.values()}
    if len(sigs) != 1:
        raise EngineError(f"mixed importance signatures in one metric call: {sorted(map(str, sigs))}")
    return next(iter(sigs))


def _check_pi_matches(record: ImageRecord, pi: PartImportance) -> None:
    if set(pi.values) != set(record.annotation.part_ids):
        raise ProtocolError(
            f"image {record.image_id!r}: importance parts {sorted(pi.values)} do not match "
            f"annotation parts {list(record.annotation.part_ids)}"
        )


def _sorted_records(records: Sequence[ImageRecord]) -> list[ImageRecord]:
    return sorted(records, key=lambda r: r.image_id)


def _threshold_flip_counts(
    records: Sequence[ImageRecord],
    pis: Mapping[str, PartImportance],
    t: float,
    direction: Direction,
    coverage: CoveragePolicy,
) -> tuple[int, int, int]:
    """Count (changed, evaluated, skipped) for the threshold-t subset in ``direction``."""
    n_changed = 0
    n_eval = 0
    n_skip = 0
    for rec in _sorted_records(records):
        pi = pis.get(rec.image_id)
        if pi is None:
            if coverage is CoveragePolicy.FAIL_MISSING:
                raise CoverageError(f"image {rec.image_id!r}: no part importances available")
            n_skip += 1
            continue
        _check_pi_matches(rec, pi)
        subset = select_threshold_subset(pi, t, direction)
        variant = rec.variants.get(subset)
        if variant is None:
            if coverage is CoveragePolicy.FAIL_MISSING:
                raise CoverageError(
                    f"image {rec.image_id!r}: missing variant {subset_key(subset)!r} "
                    f"required at threshold {t}"
                )
            n_skip += 1
            continue
        n_eval += 1
        if predicted_class(variant) != predicted_class(rec.original):
            n_changed += 1
    return n_changed, n_eval, n_skip


def preservation_check(
    records: Sequence[ImageRecord],
    pis: Mapping[str, PartImportance],
    t: float,
    *,
    coverage: CoveragePolicy = CoveragePolicy.SKIP_MISSING,
    direction: Direction = Direction.LEAST_FIRST,
) -> MetricResult:
    """Percent of images whose prediction survives removing parts covering >= t importance.

    Canonically removes least-important parts first; ``direction`` exists so a
    test harness can force both checks onto the same subset.
    """
    method_id, class_mode, _ = _pis_signature(pis)
    n_changed, n_eval, n_skip = _threshold_flip_counts(records, pis, t, Direction(direction), coverage)
    if n_eval == 0:
        raise CoverageError(f"preservation check at t={t}: no image could be evaluated")
    return MetricResult(
        metric_id=MetricId.PC,
        method_id=method_id,
        class_mode=class_mode,
        value=_percent(n_eval - n_changed, n_eval),
        per_threshold={float(t): _percent(n_eval - n_changed, n_eval)},
        n_evaluated=n_eval,
        n_skipped=n_skip,
    )


def deletion_check(
    records: Sequence[ImageRecord],
    pis: Mapping[str, PartImportance],
    t: float,
    *,
    coverage: CoveragePolicy = CoveragePolicy.SKIP_MISSING,
    direction: Direction = Direction.MOST_FIRST,
) -> MetricResult:
    """Percent of images whose prediction flips after removing the most important parts."""
    method_id, class_mode, _ = _pis_signature(pis)
    n_changed, n_eval, n_skip = _threshold_flip_counts(records, pis, t, Direction(direction), coverage)
    if n_eval == 0:
        raise CoverageError(f"deletion check at t={t}: no image could be evaluated")
    return MetricResult(
        metric_id=MetricId.DC,
        method_id=method_id,
        class_mode=class_mode,
        value=_percent(n_changed, n_eval),
        per_threshold={float(t): _percent(n_changed, n_eval)},
        n_evaluated=n_eval,
        n_skipped=n_skip,
    )


def _grid_check(fn, metric_id, records, pis, thresholds, coverage):
    per_threshold: dict[float, float] = {}
    worst_skip = 0
    method_id, class_mode, _ = _pis_signature(pis)
    for t in thresholds:
        res = fn(records, pis, t, coverage=coverage)
        per_threshold[float(t)] = res.value
        worst_skip = max(worst_skip, res.n_skipped)
    value = float(np.mean([per_threshold[float(t)] for t in thresholds]))
    return MetricResult(
        metric_id=metric_id,
        method_id=method_id,
        class_mode=class_mode,
        value=value,
        per_threshold=per_threshold,
        n_evaluated=len(records) - worst_skip,
        n_skipped=worst_skip,
    )


def preservation_check_grid(records, pis, thresholds, *, coverage=CoveragePolicy.SKIP_MISSING) -> MetricResult:
    """PC over a threshold grid; value is the mean, counts reflect the worst threshold."""
    return _grid_check(preservation_check, MetricId.PC, records, pis, thresholds, coverage)


def deletion_check_grid(records, pis, thresholds, *, coverage=CoveragePolicy.SKIP_MISSING) -> MetricResult:
    """DC over a threshold grid; value is the mean, counts reflect the worst threshold."""
    return _grid_check(deletion_check, MetricId.DC, records, pis, thresholds, coverage)


def average_ranks(values) -> np.ndarray:
    """1-based ranks with tied values assigned the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(x, y) -> float | None:
    """Pearson correlation of average ranks; None when either vector is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"expected equal-length 1-D vectors, got shapes {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("rank correlation needs at least two observations")
    rx = average_ranks(x)
    ry = average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = float(np.sqrt((rx @ rx) * (ry @ ry)))
    if denom == 0.0:
        return None
    rho = float((rx @ ry) / denom)
    return min(1.0, max(-1.0, rho))


def single_deletion(
    records: Sequence[ImageRecord],
    pis: Mapping[str, PartImportance],
    *,
    score_fn: ScoreFn = ScoreFn.SOFTMAX_PROBABILITY,
    coverage: CoveragePolicy = CoveragePolicy.SKIP_MISSING,
) -> MetricResult:
    """Rescaled mean rank correlation between claimed importances and single-part score drops.

    The drop is taken on the originally predicted class (predicted mode) or the
    ground-truth class (target mode). Images with one part, or with a constant
    drop/importance vector, are undefined and counted as skipped.
    """
    method_id, class_mode, _ = _pis_signature(pis)
    rho_sum = 0.0
    n_eval = 0
    n_skip = 0
    for rec in _sorted_records(records):
        pi = pis.get(rec.image_id)
        if pi is None:
            if coverage is CoveragePolicy.FAIL_MISSING:
                raise CoverageError(f"image {rec.image_id!r}: no part importances available")
            n_skip += 1
            continue
        _check_pi_matches(rec, pi)
        parts = rec.annotation.part_ids
        if len(parts) < 2:
            n_skip += 1
            continue
        if class_mode is ClassMode.TARGET:
            ref_class = rec.ground_truth_label
        else:
            ref_class = predicted_class(rec.original)
        base = class_score(rec.original, ref_class, score_fn)
        drops = []
        missing: PartSubset | None = None
        for part in parts:
            variant = rec.variants.get((part,))
            if variant is None:
                missing = (part,)
                break
            drops.append(base - class_score(variant, ref_class, score_fn))
        if missing is not None:
            if coverage is CoveragePolicy.FAIL_MISSING:
                raise CoverageError(
                    f"image {rec.image_id!r}: missing singleton variant {subset_key(missing)!r}"
                )
            n_skip += 1
            continue
        rho = spearman_rho([pi.values[p] for p in parts], drops)
        if rho is None:
            n_skip += 1
            continue
        rho_sum += rho
        n_eval += 1
    if n_eval == 0:
        raise CoverageError("single deletion: no image could be evaluated")
    value = 100.0 * (0.5 + rho_sum / (2.0 * n_eval))
    value = min(100.0, max(0.0, value))
    return MetricResult(
        metric_id=MetricId.SD,
        method_id=method_id,
        class_mode=class_mode,
        value=value,
        n_evaluated=n_eval,
        n_skipped=n_skip,
    )


def perturbation_curve(
    records: Sequence[ImageRecord],
    pis: Mapping[str, PartImportance],
    direction: Direction,
    *,
    accuracy_reference: AccuracyReference = AccuracyReference.ORIGINAL_PREDICTION,
    coverage: CoveragePolicy = CoveragePolicy.SKIP_MISSING,
) -> MetricResult:
    """Mean accuracy as parts are perturbed most-first (positive) or least-first (negative).

    Each image contributes one accuracy sample per removal level k/P; samples land
    in the nearest bin of {0.1, ..., 0.9} (ties toward the lower bin) and the
    score is the mean accuracy over non-empty bins.
    """
    direction = Direction(direction)
    method_id, class_mode, aggregation = _pis_signature(pis)
    if aggregation is not Aggregation.MEAN_PER_PART:
        raise EngineError("perturbation curves require mean-per-part importances")
    bins = np.asarray(LEVEL_BINS)
    bin_counts = np.zeros(bins.size, dtype=np.int64)
    bin_correct = np.zeros(bins.size, dtype=np.int64)
    n_eval = 0
    n_skip = 0
    for rec in _sorted_records(records):
        pi = pis.get(rec.image_id)
        if pi is None:
            if coverage is CoveragePolicy.FAIL_MISSING:
                raise CoverageError(f"image {rec.image_id!r}: no part importances available")
            n_skip += 1
            continue
        _check_pi_matches(rec, pi)
        order = removal_order(pi, direction)
        prefixes = required_prefix_subsets(order)
        variants = []
        missing: PartSubset | None = None
        for prefix in prefixes:
            variant = rec.variants.get(prefix)
            if variant is None:
                missing = prefix
                break
            variants.append(variant)
        if missing is not None:
            if coverage is CoveragePolicy.FAIL_MISSING:
                raise CoverageError(
                    f"image {rec.image_id!r}: missing prefix variant {subset_key(missing)!r}"
                )
            n_skip += 1
            continue
        if accuracy_reference is AccuracyReference.GROUND_TRUTH:
            ref_class = rec.ground_truth_label
        else:
            ref_class = predicted_class(rec.original)
        total_parts = len(order)
        for k, variant in enumerate(variants, start=1):
            level = k / total_parts
            idx = int(np.argmin(np.abs(bins - level)))
            bin_counts[idx] += 1
            if predicted_class(variant) == ref_class:
                bin_correct[idx] += 1
        n_eval += 1
    if n_eval == 0:
        raise CoverageError("perturbation curve: no image could be evaluated")
    per_level = []
    for idx in range(bins.size):
        if bin_counts[idx] > 0:
            per_level.append((float(bins[idx]), _percent(int(bin_correct[idx]), int(bin_counts[idx]))))
    value = float(np.mean([acc for _, acc in per_level]))
    metric_id = MetricId.PERTURB_POSITIVE if direction is Direction.MOST_FIRST else MetricId.PERTURB_NEGATIVE
    return MetricResult(
        metric_id=metric_id,
        method_id=method_id,
        class_mode=class_mode,
        value=value,
        per_level=tuple(per_level),
        n_evaluated=n_eval,
        n_skipped=n_skip,
    )
