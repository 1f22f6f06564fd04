"""Shared fixtures: a synthetic dataset with a lookup-table model and planted explanations.

The model predicts class A unless the image's designated key part is in the
removed subset, in which case it predicts class B. Per-part logit drops are
exact (w_k for non-key parts, the full margin for the key part), so a planted
attribution equal to those drops is a perfect explanation by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from parteval.core import (
    AttributionMap,
    ClassMode,
    ImageRecord,
    LogitRecord,
    PartAnnotation,
    PartSubset,
    subset_key,
)
from parteval.planner import enumerate_plan
from parteval.protocol import (
    Manifest,
    ManifestImage,
    write_logits,
    write_manifest,
    write_mask,
    write_raster,
)

PART_STRIPE_WIDTH = 4
MASK_HEIGHT = 6
MARGIN_LOGIT = 6.0


def stripe_mask(num_parts: int) -> np.ndarray:
    """Equal-area vertical stripes: part k covers 4 columns, 2 background columns lead."""
    mask = np.zeros((MASK_HEIGHT, 2 + PART_STRIPE_WIDTH * num_parts), dtype=np.uint8)
    for k in range(1, num_parts + 1):
        start = 2 + PART_STRIPE_WIDTH * (k - 1)
        mask[:, start : start + PART_STRIPE_WIDTH] = k
    return mask


@dataclass
class FixtureImage:
    record: ImageRecord
    key_part: int
    weights: dict[int, float]
    drops: dict[int, float]
    class_a: int
    class_b: int


@dataclass
class Fixture:
    images: list[FixtureImage]
    n_classes: int
    method_id: str = "planted"
    neg_method_id: str = "planted-neg"
    records: list[ImageRecord] = field(init=False)

    def __post_init__(self):
        self.records = [img.record for img in self.images]


def _lookup_logits(n_classes, class_a, class_b, key_part, weights, subset) -> np.ndarray:
    logits = np.full(n_classes, -2.0)
    if key_part in subset:
        logits[class_a] = 0.0
        logits[class_b] = MARGIN_LOGIT
    else:
        logits[class_a] = MARGIN_LOGIT - sum(weights[k] for k in subset)
        logits[class_b] = 0.0
    return logits


def build_fixture(
    seed: int = 7,
    n_images: int = 20,
    part_range: tuple[int, int] = (3, 5),
    n_classes: int = 4,
    invert: bool = False,
) -> Fixture:
    rng = np.random.default_rng(seed)
    images = []
    for i in range(n_images):
        num_parts = int(rng.integers(part_range[0], part_range[1] + 1))
        parts = tuple(range(1, num_parts + 1))
        mask = stripe_mask(num_parts)
        ann = PartAnnotation(image_id=f"img{i:03d}", mask=mask)
        class_a = int(rng.integers(0, n_classes))
        class_b = (class_a + 1 + int(rng.integers(0, n_classes - 1))) % n_classes
        key_part = int(rng.choice(parts))
        # Distinct weights in [0.8, 1.4]: non-key drop shares stay above 0.2
        # of the total and the key share above 0.5 for 3..5 parts.
        offsets = rng.permutation(num_parts)
        weights = {
            k: 0.8 + 0.6 * (offsets[j] / max(num_parts - 1, 1)) + 0.001 * j
            for j, k in enumerate(parts)
            if k != key_part
        }

        plan = enumerate_plan(parts, 32, image_id=ann.image_id)
        variants: dict[PartSubset, LogitRecord] = {}
        for subset in ((),) + plan.subsets:
            variants[subset] = LogitRecord(
                image_id=ann.image_id,
                variant=subset,
                logits=_lookup_logits(n_classes, class_a, class_b, key_part, weights, subset),
            )

        # True raw-logit drop of class A under single deletion.
        drops = {k: (MARGIN_LOGIT if k == key_part else weights[k]) for k in parts}
        area = MASK_HEIGHT * PART_STRIPE_WIDTH
        attr = np.zeros_like(mask, dtype=np.float64)
        for k in parts:
            attr[mask == k] = drops[k] / area
        sign = -1.0 if invert else 1.0
        attributions = {
            ("planted", ClassMode.PREDICTED): AttributionMap(
                image_id=ann.image_id, method_id="planted",
                class_mode=ClassMode.PREDICTED, values=sign * attr,
            ),
            ("planted-neg", ClassMode.PREDICTED): AttributionMap(
                image_id=ann.image_id, method_id="planted-neg",
                class_mode=ClassMode.PREDICTED, values=-sign * attr,
            ),
        }
        record = ImageRecord(
            annotation=ann,
            ground_truth_label=class_a,
            variants=variants,
            attributions=attributions,
        )
        images.append(
            FixtureImage(
                record=record,
                key_part=key_part,
                weights=weights,
                drops=drops,
                class_a=class_a,
                class_b=class_b,
            )
        )
    return Fixture(images=images, n_classes=n_classes)


def write_fixture_dataset(root, fixture: Fixture) -> str:
    """Materialize the fixture as protocol files plus manifest; returns manifest path."""
    root = Path(root)
    for sub in ("masks", "logits", "attr"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for fi in fixture.images:
        rec = fi.record
        image_id = rec.image_id
        mask_file = f"masks/{image_id}.png"
        write_mask(root / mask_file, rec.annotation.mask)
        variant_files = {}
        for subset, logit_rec in rec.variants.items():
            name = f"logits/{image_id}_{subset_key(subset)}.json"
            write_logits(root / name, logit_rec)
            variant_files[subset] = name
        attr_files = {}
        for (method, mode), amap in rec.attributions.items():
            name = f"attr/{image_id}_{method}_{mode.value}.ingf"
            write_raster(root / name, amap.values)
            attr_files[(method, mode)] = name
        entries.append(
            ManifestImage(
                image_id=image_id,
                ground_truth_label=rec.ground_truth_label,
                mask_file=mask_file,
                part_ids=rec.annotation.part_ids,
                plan=tuple(s for s in rec.variants if s),
                variant_logit_files=variant_files,
                attribution_files=attr_files,
            )
        )
    manifest = Manifest(
        dataset_name="synthetic-lookup",
        class_count=fixture.n_classes,
        images=entries,
        plan_budget=32,
    )
    path = root / "manifest.json"
    write_manifest(path, manifest)
    return str(path)


def softmax_reference(logits, index):
    """Independent scalar softmax used by oracles (math.exp, no shared code path)."""
    m = max(logits)
    denom = sum(math.exp(v - m) for v in logits)
    return math.exp(logits[index] - m) / denom


@pytest.fixture(scope="session")
def fixture_dataset() -> Fixture:
    return build_fixture()


@pytest.fixture(scope="session")
def fixture_manifest(tmp_path_factory, fixture_dataset) -> str:
    return write_fixture_dataset(tmp_path_factory.mktemp("fixture"), fixture_dataset)
