"""Toy dataset fixtures: 5 images, 3 classes, 2-3 parts, tiny trained ViT."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from parteval_adapter.model import ClassifierSpec, train_toy_classifier
from parteval_adapter.pipeline import AdapterConfig, run_pipeline

CLASS_COLORS = {
    0: (200, 40, 40),
    1: (40, 200, 40),
    2: (40, 40, 200),
}


def toy_image_and_mask(rng, label: int, num_parts: int):
    """16x16 RGB image: class-colored object on a dark background, striped parts."""
    image = np.full((16, 16, 3), 60, dtype=np.uint8)
    image += rng.integers(0, 8, size=image.shape, dtype=np.uint8)
    mask = np.zeros((16, 16), dtype=np.uint8)
    r0 = int(rng.integers(2, 5))
    c0 = int(rng.integers(2, 4))
    width = 4 if num_parts == 3 else 5
    color = np.array(CLASS_COLORS[label], dtype=np.int16)
    for part in range(1, num_parts + 1):
        c_start = c0 + (part - 1) * width
        region = (slice(r0, r0 + 9), slice(c_start, c_start + width))
        shade = color + rng.integers(-20, 20, size=3)
        image[region] = np.clip(shade, 0, 255).astype(np.uint8)
        mask[region] = part
    return image, mask


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    rng = np.random.default_rng(42)
    (root / "images").mkdir()
    (root / "masks").mkdir()
    labels = {}
    parts = [2, 3, 2, 3, 3]
    classes = [0, 1, 2, 0, 1]
    arrays = []
    for i, (num_parts, label) in enumerate(zip(parts, classes)):
        image_id = f"toy{i}"
        image, mask = toy_image_and_mask(rng, label, num_parts)
        Image.fromarray(image).save(root / "images" / f"{image_id}.png")
        Image.fromarray(mask, mode="L").save(root / "masks" / f"{image_id}.png")
        labels[image_id] = label
        arrays.append((image, label))
    (root / "labels.json").write_text(json.dumps(labels))

    spec = ClassifierSpec(
        model_id="tiny-vit-toy",
        checkpoint=str(root / "model" / "tiny_vit.pt"),
        num_labels=3,
    )
    train_toy_classifier(spec, [a for a, _ in arrays], [l for _, l in arrays], seed=11)
    return root, spec


@pytest.fixture(scope="session")
def adapter_config(toy_dataset):
    root, spec = toy_dataset
    out_dir = root / "protocol"
    config = AdapterConfig(
        dataset_name="toy-parts",
        class_count=3,
        images_dir=str(root / "images"),
        masks_dir=str(root / "masks"),
        labels_file=str(root / "labels.json"),
        out_dir=str(out_dir),
        model=spec,
    )
    return config


@pytest.fixture(scope="session")
def pipeline_manifest(adapter_config) -> Path:
    return run_pipeline(adapter_config)
