"""Dataset-level evaluation: aggregate importances in parallel, reduce deterministically."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

from .core import (
    AccuracyReference,
    Aggregation,
    ClassMode,
    CoveragePolicy,
    Direction,
    EvaluationConfig,
)
from .errors import CoverageError
from .importance import PartImportance, aggregate
from .metrics import (
    MetricResult,
    deletion_check_grid,
    perturbation_curve,
    preservation_check_grid,
    single_deletion,
)
from .protocol import LoadedDataset

METRIC_ORDER = ("PC", "SD", "DC", "PerturbPositive", "PerturbNegative")


def _aggregate_all(
    dataset: LoadedDataset,
    pairs: Sequence[tuple[str, ClassMode]],
    aggregation: Aggregation,
    workers: int,
) -> dict[tuple[str, ClassMode, Aggregation], dict[str, PartImportance]]:
    """Aggregate every (image, method, mode) raster at the configured and mean granularity.

    Tasks are independent; worker count affects scheduling only, never values,
    and results are keyed so downstream reductions run in image-id order.
    """
    modes_needed = {aggregation, Aggregation.MEAN_PER_PART}
    tasks = []
    for rec in dataset.records:
        for pair in pairs:
            attr = rec.attributions.get(pair)
            if attr is None:
                continue
            for agg in sorted(modes_needed, key=lambda a: a.value):
                tasks.append((rec, attr, agg))

    def run(task):
        rec, attr, agg = task
        return (attr.method_id, attr.class_mode, agg, rec.image_id, aggregate(attr, rec.annotation, agg))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            produced = list(pool.map(run, tasks))
    else:
        produced = [run(t) for t in tasks]

    out: dict[tuple[str, ClassMode, Aggregation], dict[str, PartImportance]] = {}
    for method, mode, agg, image_id, pi in produced:
        out.setdefault((method, mode, agg), {})[image_id] = pi
    return out


def evaluate_dataset(
    dataset: LoadedDataset,
    config: EvaluationConfig,
    *,
    workers: int = 1,
) -> list[MetricResult]:
    """All five metrics for every (method, class-mode) pair matching the config."""
    pairs = [mm for mm in dataset.method_mode_pairs() if mm[1] is config.class_mode]
    if not pairs or not dataset.records:
        return []
    pis_by_key = _aggregate_all(dataset, pairs, config.aggregation, workers)
    records = dataset.records
    skip_ok = config.coverage_policy is CoveragePolicy.SKIP_MISSING
    results: list[MetricResult] = []
    for method, mode in pairs:
        primary = pis_by_key.get((method, mode, config.aggregation), {})
        mean_pis = pis_by_key.get((method, mode, Aggregation.MEAN_PER_PART), {})
        if not primary:
            continue
        runs = (
            lambda: preservation_check_grid(records, primary, config.thresholds, coverage=config.coverage_policy),
            lambda: single_deletion(records, primary, score_fn=config.score_fn, coverage=config.coverage_policy),
            lambda: deletion_check_grid(records, primary, config.thresholds, coverage=config.coverage_policy),
            lambda: perturbation_curve(
                records, mean_pis, Direction.MOST_FIRST,
                accuracy_reference=config.accuracy_reference, coverage=config.coverage_policy,
            ),
            lambda: perturbation_curve(
                records, mean_pis, Direction.LEAST_FIRST,
                accuracy_reference=config.accuracy_reference, coverage=config.coverage_policy,
            ),
        )
        for run in runs:
            try:
                results.append(run())
            except CoverageError:
                # Under skip-missing a metric with zero evaluable images is
                # omitted rather than failing the whole run.
                if not skip_ok:
                    raise
    results.sort(key=lambda r: (r.method_id, r.class_mode.value, METRIC_ORDER.index(r.metric_id.value)))
    return results


def resolve_accuracy_reference(setting: str, class_mode: ClassMode) -> AccuracyReference:
    """'auto' pairs predicted mode with the original prediction and target mode with ground truth."""
    if setting == "auto":
        return (
            AccuracyReference.ORIGINAL_PREDICTION
            if class_mode is ClassMode.PREDICTED
            else AccuracyReference.GROUND_TRUTH
        )
    return AccuracyReference(setting)
