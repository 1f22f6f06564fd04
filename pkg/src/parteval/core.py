"""Shared domain types: part annotations, attribution rasters, logit records, config."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import ProtocolError

PartSubset = tuple[int, ...]
ORIGINAL: PartSubset = ()


class ClassMode(str, Enum):
    PREDICTED = "predicted"
    TARGET = "target"


class Aggregation(str, Enum):
    SUM_PER_PART = "sum"
    MEAN_PER_PART = "mean"


class ScoreFn(str, Enum):
    SOFTMAX_PROBABILITY = "softmax"
    RAW_LOGIT = "logit"


class AccuracyReference(str, Enum):
    ORIGINAL_PREDICTION = "original-prediction"
    GROUND_TRUTH = "ground-truth"


class CoveragePolicy(str, Enum):
    SKIP_MISSING = "skip-missing"
    FAIL_MISSING = "fail-missing"


class Direction(str, Enum):
    LEAST_FIRST = "least-first"
    MOST_FIRST = "most-first"


def normalize_subset(parts) -> PartSubset:
    """Canonical subset form: ascending tuple of unique part ids."""
    subset = tuple(sorted(set(int(p) for p in parts)))
    return subset


@dataclass(frozen=True)
class PartAnnotation:
    """Labeled part masks for one image: 0 marks background, k marks part k."""

    image_id: str
    mask: np.ndarray
    part_ids: PartSubset = field(init=False)

    def __post_init__(self):
        mask = np.asarray(self.mask)
        if mask.ndim != 2:
            raise ProtocolError(f"mask for {self.image_id!r} must be 2-D, got shape {mask.shape}")
        if not np.issubdtype(mask.dtype, np.integer):
            raise ProtocolError(f"mask for {self.image_id!r} must be integer-valued, got {mask.dtype}")
        if mask.min() < 0:
            raise ProtocolError(f"mask for {self.image_id!r} contains negative labels")
        labels = np.unique(mask)
        part_ids = tuple(int(v) for v in labels if v != 0)
        if not part_ids:
            raise ProtocolError(f"mask for {self.image_id!r} has no parts present")
        mask = mask.copy()
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "part_ids", part_ids)

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def num_parts(self) -> int:
        return len(self.part_ids)


@dataclass(frozen=True)
class AttributionMap:
    """Per-pixel explanation scores for one (image, method, class-mode)."""

    image_id: str
    method_id: str
    class_mode: ClassMode
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ProtocolError(
                f"attribution for {self.image_id!r}/{self.method_id!r} must be 2-D, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ProtocolError(
                f"attribution for {self.image_id!r}/{self.method_id!r} contains non-finite values"
            )
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "class_mode", ClassMode(self.class_mode))


@dataclass(frozen=True)
class LogitRecord:
    """Model logits on one variant; the empty subset is the unperturbed image."""

    image_id: str
    variant: PartSubset
    logits: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.ndim != 1 or logits.size == 0:
            raise ProtocolError(f"logits for {self.image_id!r} must be a non-empty vector")
        if not np.all(np.isfinite(logits)):
            raise ProtocolError(f"logits for {self.image_id!r} contain non-finite values")
        logits = logits.copy()
        logits.flags.writeable = False
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "variant", normalize_subset(self.variant))

    @property
    def num_classes(self) -> int:
        return int(self.logits.size)


@dataclass(frozen=True)
class ImageRecord:
    """Everything the metrics need for one image: masks, variant logits, attributions."""

    annotation: PartAnnotation
    ground_truth_label: int
    variants: Mapping[PartSubset, LogitRecord]
    attributions: Mapping[tuple[str, ClassMode], AttributionMap]

    def __post_init__(self):
        variants = {normalize_subset(k): v for k, v in self.variants.items()}
        if ORIGINAL not in variants:
            raise ProtocolError(f"image {self.image_id!r} lacks logits for the original image")
        part_set = set(self.annotation.part_ids)
        for subset in variants:
            if not set(subset) <= part_set:
                raise ProtocolError(
                    f"image {self.image_id!r}: variant subset {subset} is not a subset of part ids"
                )
        attributions = {(m, ClassMode(c)): a for (m, c), a in self.attributions.items()}
        for attr in attributions.values():
            if attr.values.shape != self.annotation.mask.shape:
                raise ProtocolError(
                    f"image {self.image_id!r}: attribution shape {attr.values.shape} does not match "
                    f"mask shape {self.annotation.mask.shape}"
                )
        object.__setattr__(self, "variants", variants)
        object.__setattr__(self, "attributions", attributions)

    @property
    def image_id(self) -> str:
        return self.annotation.image_id

    @property
    def original(self) -> LogitRecord:
        return self.variants[ORIGINAL]


DEFAULT_THRESHOLDS = (0.2, 0.4, 0.6, 0.8)


@dataclass(frozen=True)
class EvaluationConfig:
    """Knobs controlling one evaluation run."""

    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    aggregation: Aggregation = Aggregation.SUM_PER_PART
    class_mode: ClassMode = ClassMode.PREDICTED
    score_fn: ScoreFn = ScoreFn.SOFTMAX_PROBABILITY
    accuracy_reference: AccuracyReference = AccuracyReference.ORIGINAL_PREDICTION
    coverage_policy: CoveragePolicy = CoveragePolicy.SKIP_MISSING

    def __post_init__(self):
        ts = tuple(float(t) for t in self.thresholds)
        if not ts:
            raise ValueError("thresholds must be non-empty")
        for t in ts:
            if not 0.0 < t < 1.0:
                raise ValueError(f"threshold {t} outside the open interval (0, 1)")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"thresholds must be strictly increasing, got {ts}")
        object.__setattr__(self, "thresholds", ts)
        object.__setattr__(self, "aggregation", Aggregation(self.aggregation))
        object.__setattr__(self, "class_mode", ClassMode(self.class_mode))
        object.__setattr__(self, "score_fn", ScoreFn(self.score_fn))
        object.__setattr__(self, "accuracy_reference", AccuracyReference(self.accuracy_reference))
        object.__setattr__(self, "coverage_policy", CoveragePolicy(self.coverage_policy))


def predicted_class(rec: LogitRecord) -> int:
    """Index of the maximum logit; ties broken by the lowest class index."""
    if rec.logits.size == 0:
        raise ProtocolError(f"empty logits for {rec.image_id!r}")
    return int(np.argmax(rec.logits))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max-subtracted)."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def class_score(rec: LogitRecord, class_id: int, fn: ScoreFn = ScoreFn.SOFTMAX_PROBABILITY) -> float:
    """Scalar score for one class: softmax probability or the raw logit."""
    if not 0 <= class_id < rec.num_classes:
        raise ProtocolError(
            f"class {class_id} out of range for {rec.image_id!r} with {rec.num_classes} classes"
        )
    fn = ScoreFn(fn)
    if fn is ScoreFn.RAW_LOGIT:
        return float(rec.logits[class_id])
    return float(softmax(rec.logits)[class_id])


def subset_key(subset: PartSubset) -> str:
    """Wire encoding of a part subset: sorted ids joined by '-'; empty is 'orig'."""
    subset = normalize_subset(subset)
    if not subset:
        return "orig"
    return "-".join(str(p) for p in subset)


def parse_subset_key(key: str) -> PartSubset:
    """Inverse of :func:`subset_key`."""
    if key == "orig":
        return ORIGINAL
    try:
        parts = tuple(int(tok) for tok in key.split("-"))
    except ValueError:
        raise ProtocolError(f"malformed subset key {key!r}") from None
    if not parts or any(p <= 0 for p in parts):
        raise ProtocolError(f"malformed subset key {key!r}")
    if tuple(sorted(set(parts))) != parts:
        raise ProtocolError(f"subset key {key!r} is not sorted and duplicate-free")
    return parts


def is_finite_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)
