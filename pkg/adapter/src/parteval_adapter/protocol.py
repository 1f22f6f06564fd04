"""Writers for the engine's wire formats (raster container, logits JSON, manifest).

The adapter talks to the engine exclusively through these files, so the
encoders live here rather than importing the engine package. All writes are
atomic (temp file + rename) so the engine never observes partial output.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image

RASTER_MAGIC = b"INGF"
SCHEMA_VERSION = 1


def atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def subset_key(parts) -> str:
    parts = sorted(set(int(p) for p in parts))
    return "-".join(str(p) for p in parts) if parts else "orig"


def parse_subset_key(key: str) -> tuple[int, ...]:
    if key == "orig":
        return ()
    return tuple(int(tok) for tok in key.split("-"))


def write_raster(path: Path, values: np.ndarray) -> None:
    arr = np.asarray(values)
    if arr.ndim != 2 or not np.all(np.isfinite(arr)):
        raise ValueError(f"raster for {path} must be finite and 2-D")
    header = RASTER_MAGIC + struct.pack("<II", arr.shape[0], arr.shape[1])
    atomic_write_bytes(Path(path), header + arr.astype("<f4").tobytes(order="C"))


def write_logits(path: Path, image_id: str, subset, logits) -> None:
    values = [float(v) for v in logits]
    if not all(np.isfinite(values)):
        raise ValueError(f"non-finite logits for {image_id} / {subset_key(subset)}")
    obj = {"image_id": image_id, "subset": subset_key(subset), "logits": values}
    atomic_write_bytes(Path(path), (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def read_mask(path: Path) -> np.ndarray:
    img = Image.open(path)
    img.load()
    if img.mode not in ("L", "P"):
        raise ValueError(f"mask {path} must be single-channel 8-bit, got mode {img.mode}")
    return np.asarray(img, dtype=np.uint8)


def mask_part_ids(mask: np.ndarray) -> tuple[int, ...]:
    return tuple(int(v) for v in np.unique(mask) if v != 0)


def write_manifest(path: Path, manifest: dict) -> None:
    atomic_write_bytes(Path(path), (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())


def read_manifest(path: Path) -> dict:
    return json.loads(Path(path).read_text())


def skeleton_manifest(dataset_name: str, class_count: int, images: list[dict]) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "dataset_name": dataset_name,
        "class_count": class_count,
        "images": images,
    }
