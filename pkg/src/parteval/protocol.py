"""File formats and manifest schema: the boundary between engine and adapter."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import (
    AttributionMap,
    ClassMode,
    ImageRecord,
    LogitRecord,
    PartAnnotation,
    PartSubset,
    is_finite_number,
    normalize_subset,
    parse_subset_key,
    subset_key,
)
from .errors import ManifestError, ProtocolError
from .otdd import LabeledPointCloud
from .planner import PerturbationPlan

RASTER_MAGIC = b"INGF"
SCHEMA_VERSION = 1


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Binary raster container (magic INGF, u32le dims, f32le row-major payload)

def write_raster(path: str | Path, values: np.ndarray) -> None:
    path = Path(path)
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.size == 0:
        raise ProtocolError(f"raster must be a non-empty 2-D array, got shape {arr.shape}", path=str(path))
    if not np.all(np.isfinite(arr)):
        raise ProtocolError("raster contains non-finite values", path=str(path))
    payload = arr.astype("<f4").tobytes(order="C")
    header = RASTER_MAGIC + struct.pack("<II", arr.shape[0], arr.shape[1])
    _atomic_write_bytes(path, header + payload)


def read_raster(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ProtocolError(f"cannot read raster: {exc}", path=str(path)) from exc
    if len(data) < 4 or data[:4] != RASTER_MAGIC:
        raise ProtocolError("bad raster magic", path=str(path), offset=0)
    if len(data) < 12:
        raise ProtocolError("truncated raster header", path=str(path), offset=len(data))
    height, width = struct.unpack("<II", data[4:12])
    if height == 0 or width == 0:
        raise ProtocolError(f"degenerate raster dimensions {height}x{width}", path=str(path), offset=4)
    expected = 12 + 4 * height * width
    if len(data) < expected:
        raise ProtocolError(
            f"truncated raster payload (expected {expected} bytes, got {len(data)})",
            path=str(path), offset=len(data),
        )
    if len(data) > expected:
        raise ProtocolError(
            f"trailing bytes after raster payload (expected {expected} bytes, got {len(data)})",
            path=str(path), offset=expected,
        )
    flat = np.frombuffer(data, dtype="<f4", count=height * width, offset=12)
    finite = np.isfinite(flat)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise ProtocolError("non-finite raster value", path=str(path), offset=12 + 4 * bad)
    return flat.reshape(height, width).copy()


# ---------------------------------------------------------------------------
# Part masks (single-channel 8-bit PNG; 0 = background)

def write_mask(path: str | Path, mask: np.ndarray) -> None:
    path = Path(path)
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ProtocolError(f"mask must be 2-D, got shape {arr.shape}", path=str(path))
    if arr.min() < 0 or arr.max() > 255:
        raise ProtocolError("mask labels must fit in 8 bits", path=str(path))
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path, format="PNG")


def read_mask(path: str | Path, image_id: str | None = None) -> PartAnnotation:
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except (OSError, UnidentifiedImageError) as exc:
        raise ProtocolError(f"cannot decode mask: {exc}", path=str(path)) from exc
    if img.format != "PNG":
        raise ProtocolError(f"mask must be a PNG, got {img.format}", path=str(path))
    if img.mode in ("I", "I;16", "I;16B", "I;16L", "I;16N"):
        raise ProtocolError("mask must be 8-bit, got a 16/32-bit image", path=str(path))
    if img.mode not in ("L", "P"):
        raise ProtocolError(f"mask must be single-channel 8-bit, got mode {img.mode}", path=str(path))
    arr = np.asarray(img, dtype=np.uint8)
    try:
        return PartAnnotation(image_id=image_id if image_id is not None else path.stem, mask=arr)
    except ProtocolError as exc:
        raise ProtocolError(str(exc.args[0]), path=str(path)) from None


# ---------------------------------------------------------------------------
# Logit records (JSON, human-inspectable)

def _reject_json_constant(token: str):
    raise ProtocolError(f"non-finite JSON token {token!r} is not allowed")


def write_logits(path: str | Path, record: LogitRecord) -> None:
    path = Path(path)
    obj = {
        "image_id": record.image_id,
        "subset": subset_key(record.variant),
        "logits": [float(v) for v in record.logits],
    }
    _atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def read_logits(path: str | Path, *, class_count: int | None = None) -> LogitRecord:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProtocolError(f"cannot read logits: {exc}", path=str(path)) from exc
    try:
        obj = json.loads(text, parse_constant=_reject_json_constant)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"invalid logits JSON: {exc}", path=str(path)) from exc
    if not isinstance(obj, dict):
        raise ProtocolError("logits file must hold a JSON object", path=str(path))
    image_id = obj.get("image_id")
    subset = obj.get("subset")
    logits = obj.get("logits")
    if not isinstance(image_id, str) or not image_id:
        raise ProtocolError("logits missing a non-empty 'image_id'", path=str(path))
    if not isinstance(subset, str):
        raise ProtocolError("logits missing the 'subset' key", path=str(path))
    if not isinstance(logits, list) or not logits:
        raise ProtocolError("logits must be a non-empty array", path=str(path))
    if not all(is_finite_number(v) for v in logits):
        raise ProtocolError("logits contain non-finite or non-numeric values", path=str(path))
    if class_count is not None and len(logits) != class_count:
        raise ProtocolError(
            f"logits length {len(logits)} does not match class count {class_count}", path=str(path)
        )
    try:
        variant = parse_subset_key(subset)
    except ProtocolError as exc:
        raise ProtocolError(str(exc.args[0]), path=str(path)) from None
    return LogitRecord(image_id=image_id, variant=variant, logits=np.asarray(logits, dtype=np.float64))


# ---------------------------------------------------------------------------
# Labeled point clouds (JSON embedding files for the dataset-distance command)

def write_cloud(path: str | Path, cloud: LabeledPointCloud) -> None:
    path = Path(path)
    obj = {
        "name": cloud.name,
        "points": [[float(v) for v in row] for row in cloud.points],
        "labels": [int(v) for v in cloud.labels],
    }
    _atomic_write_bytes(path, (json.dumps(obj, sort_keys=True) + "\n").encode())


def read_cloud(path: str | Path) -> LabeledPointCloud:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(), parse_constant=_reject_json_constant)
    except OSError as exc:
        raise ProtocolError(f"cannot read embeddings: {exc}", path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"invalid embeddings JSON: {exc}", path=str(path)) from exc
    if not isinstance(obj, dict):
        raise ProtocolError("embeddings file must hold a JSON object", path=str(path))
    name = obj.get("name", path.stem)
    points = obj.get("points")
    labels = obj.get("labels")
    if not isinstance(points, list) or not points or not all(isinstance(r, list) for r in points):
        raise ProtocolError("embeddings must contain a non-empty 'points' matrix", path=str(path))
    widths = {len(r) for r in points}
    if len(widths) != 1 or 0 in widths:
        raise ProtocolError("embeddings rows disagree on dimension", path=str(path))
    if not all(is_finite_number(v) for row in points for v in row):
        raise ProtocolError("embeddings contain non-finite values", path=str(path))
    if not isinstance(labels, list) or len(labels) != len(points):
        raise ProtocolError("embeddings 'labels' must match the number of points", path=str(path))
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in labels):
        raise ProtocolError("embeddings labels must be integers", path=str(path))
    try:
        return LabeledPointCloud(points=np.asarray(points, dtype=np.float64),
                                 labels=np.asarray(labels, dtype=np.int64),
                                 name=str(name))
    except ProtocolError as exc:
        raise ProtocolError(str(exc.args[0]), path=str(path)) from None


# ---------------------------------------------------------------------------
# Manifest

@dataclass
class ManifestImage:
    image_id: str
    ground_truth_label: int
    mask_file: str
    part_ids: PartSubset
    plan: tuple[PartSubset, ...] | None = None
    variant_logit_files: dict[PartSubset, str] = field(default_factory=dict)
    attribution_files: dict[tuple[str, ClassMode], str] = field(default_factory=dict)
    embedding_file: str | None = None


@dataclass
class Manifest:
    dataset_name: str
    class_count: int
    images: list[ManifestImage]
    schema_version: int = SCHEMA_VERSION
    plan_budget: int | None = None
    provenance: dict[str, Any] | None = None


def manifest_to_dict(manifest: Manifest) -> dict[str, Any]:
    images = []
    for img in manifest.images:
        entry: dict[str, Any] = {
            "image_id": img.image_id,
            "ground_truth_label": img.ground_truth_label,
            "mask_file": img.mask_file,
            "part_ids": list(img.part_ids),
            "variant_logit_files": {subset_key(k): v for k, v in img.variant_logit_files.items()},
            "attribution_files": _attr_files_to_dict(img.attribution_files),
        }
        if img.plan is not None:
            entry["plan"] = [subset_key(s) for s in img.plan]
        if img.embedding_file is not None:
            entry["embedding_file"] = img.embedding_file
        images.append(entry)
    obj: dict[str, Any] = {
        "schema_version": manifest.schema_version,
        "dataset_name": manifest.dataset_name,
        "class_count": manifest.class_count,
        "images": images,
    }
    if manifest.plan_budget is not None:
        obj["plan_budget"] = manifest.plan_budget
    if manifest.provenance is not None:
        obj["provenance"] = manifest.provenance
    return obj


def _attr_files_to_dict(files: Mapping[tuple[str, ClassMode], str]) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for (method, mode), path in files.items():
        out.setdefault(method, {})[ClassMode(mode).value] = path
    return out


def write_manifest(path: str | Path, manifest: Manifest) -> None:
    path = Path(path)
    data = (json.dumps(manifest_to_dict(manifest), indent=2, sort_keys=True) + "\n").encode()
    _atomic_write_bytes(path, data)


_TOP_KEYS = {"schema_version", "dataset_name", "class_count", "plan_budget", "provenance", "images"}
_IMAGE_KEYS = {
    "image_id", "ground_truth_label", "mask_file", "part_ids", "plan",
    "variant_logit_files", "attribution_files", "embedding_file",
}


class _Violations:
    def __init__(self):
        self.items: list[str] = []

    def add(self, message: str) -> None:
        self.items.append(message)


def _parse_image(entry: Any, index: int, class_count: int | None, v: _Violations) -> ManifestImage | None:
    where = f"images[{index}]"
    if not isinstance(entry, dict):
        v.add(f"{where}: must be an object")
        return None
    unknown = set(entry) - _IMAGE_KEYS
    if unknown:
        v.add(f"{where}: unknown keys {sorted(unknown)}")
    image_id = entry.get("image_id")
    if not isinstance(image_id, str) or not image_id:
        v.add(f"{where}: missing non-empty 'image_id'")
        return None
    where = f"images[{index}] ({image_id})"
    ok = True

    label = entry.get("ground_truth_label")
    if not isinstance(label, int) or isinstance(label, bool) or label < 0:
        v.add(f"{where}: 'ground_truth_label' must be a non-negative integer")
        ok = False
    elif class_count is not None and label >= class_count:
        v.add(f"{where}: label {label} outside class count {class_count}")
        ok = False

    mask_file = entry.get("mask_file")
    if not isinstance(mask_file, str) or not mask_file:
        v.add(f"{where}: missing 'mask_file'")
        ok = False

    raw_parts = entry.get("part_ids")
    part_ids: PartSubset = ()
    if (not isinstance(raw_parts, list) or not raw_parts
            or not all(isinstance(p, int) and not isinstance(p, bool) and p > 0 for p in raw_parts)):
        v.add(f"{where}: 'part_ids' must be a non-empty list of positive integers")
        ok = False
    else:
        part_ids = tuple(raw_parts)
        if normalize_subset(part_ids) != part_ids:
            v.add(f"{where}: 'part_ids' must be sorted and duplicate-free")
            ok = False

    plan: tuple[PartSubset, ...] | None = None
    if "plan" in entry:
        raw_plan = entry["plan"]
        if not isinstance(raw_plan, list) or not all(isinstance(s, str) for s in raw_plan):
            v.add(f"{where}: 'plan' must be a list of subset keys")
            ok = False
        else:
            subsets = []
            for key in raw_plan:
                try:
                    subset = parse_subset_key(key)
                except ProtocolError:
                    v.add(f"{where}: malformed plan subset key {key!r}")
                    ok = False
                    continue
                if not subset:
                    v.add(f"{where}: plan may not contain the original image")
                    ok = False
                    continue
                subsets.append(subset)
            if len(set(subsets)) != len(subsets):
                v.add(f"{where}: plan contains duplicate subsets")
                ok = False
            if part_ids and any(not set(s) <= set(part_ids) for s in subsets):
                v.add(f"{where}: plan subsets must be drawn from part_ids")
                ok = False
            plan = tuple(subsets)

    variants: dict[PartSubset, str] = {}
    raw_variants = entry.get("variant_logit_files", {})
    if not isinstance(raw_variants, dict):
        v.add(f"{where}: 'variant_logit_files' must be an object")
        ok = False
    else:
        for key, p in raw_variants.items():
            if not isinstance(p, str) or not p:
                v.add(f"{where}: variant {key!r} has an invalid path")
                ok = False
                continue
            try:
                subset = parse_subset_key(key)
            except ProtocolError:
                v.add(f"{where}: malformed variant subset key {key!r}")
                ok = False
                continue
            if part_ids and not set(subset) <= set(part_ids):
                v.add(f"{where}: variant subset {key!r} not drawn from part_ids")
                ok = False
                continue
            variants[subset] = p

    attributions: dict[tuple[str, ClassMode], str] = {}
    raw_attr = entry.get("attribution_files", {})
    if not isinstance(raw_attr, dict):
        v.add(f"{where}: 'attribution_files' must be an object")
        ok = False
    else:
        for method, modes in raw_attr.items():
            if not isinstance(method, str) or not method:
                v.add(f"{where}: attribution method id must be a non-empty string")
                ok = False
                continue
            if not isinstance(modes, dict):
                v.add(f"{where}: attribution entry for {method!r} must map class modes to paths")
                ok = False
                continue
            for mode, p in modes.items():
                if mode not in (ClassMode.PREDICTED.value, ClassMode.TARGET.value):
                    v.add(f"{where}: unknown class mode {mode!r} for method {method!r}")
                    ok = False
                    continue
                if not isinstance(p, str) or not p:
                    v.add(f"{where}: attribution path for {method!r}/{mode} invalid")
                    ok = False
                    continue
                attributions[(method, ClassMode(mode))] = p

    embedding = entry.get("embedding_file")
    if embedding is not None and (not isinstance(embedding, str) or not embedding):
        v.add(f"{where}: 'embedding_file' must be a non-empty string when present")
        ok = False
        embedding = None

    if not ok:
        return None
    return ManifestImage(
        image_id=image_id,
        ground_truth_label=label,
        mask_file=mask_file,
        part_ids=part_ids,
        plan=plan,
        variant_logit_files=variants,
        attribution_files=attributions,
        embedding_file=embedding,
    )


def manifest_from_dict(obj: Any, v: _Violations) -> Manifest | None:
    if not isinstance(obj, dict):
        v.add("manifest must be a JSON object")
        return None
    unknown = set(obj) - _TOP_KEYS
    if unknown:
        v.add(f"unknown top-level keys {sorted(unknown)}")
    schema = obj.get("schema_version")
    if schema != SCHEMA_VERSION:
        v.add(f"unsupported schema_version {schema!r} (expected {SCHEMA_VERSION})")
    dataset_name = obj.get("dataset_name")
    if not isinstance(dataset_name, str) or not dataset_name:
        v.add("missing non-empty 'dataset_name'")
        dataset_name = ""
    class_count = obj.get("class_count")
    if not isinstance(class_count, int) or isinstance(class_count, bool) or class_count < 1:
        v.add("'class_count' must be a positive integer")
        class_count = None
    plan_budget = obj.get("plan_budget")
    if plan_budget is not None and (not isinstance(plan_budget, int) or isinstance(plan_budget, bool) or plan_budget < 1):
        v.add("'plan_budget' must be a positive integer when present")
        plan_budget = None
    provenance = obj.get("provenance")
    if provenance is not None and not isinstance(provenance, dict):
        v.add("'provenance' must be an object when present")
        provenance = None
    raw_images = obj.get("images")
    images: list[ManifestImage] = []
    if not isinstance(raw_images, list):
        v.add("'images' must be a list")
    else:
        seen: set[str] = set()
        for i, entry in enumerate(raw_images):
            img = _parse_image(entry, i, class_count, v)
            if img is None:
                continue
            if img.image_id in seen:
                v.add(f"duplicate image_id {img.image_id!r}")
                continue
            seen.add(img.image_id)
            images.append(img)
    if class_count is None:
        return None
    return Manifest(
        dataset_name=dataset_name,
        class_count=class_count,
        images=images,
        schema_version=SCHEMA_VERSION,
        plan_budget=plan_budget,
        provenance=provenance,
    )


def read_manifest(path: str | Path, *, check_paths: bool = True) -> Manifest:
    """Parse and structurally validate a manifest, collecting every violation."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text(), parse_constant=_reject_json_constant)
    except OSError as exc:
        raise ProtocolError(f"cannot read manifest: {exc}", path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"invalid manifest JSON: {exc}", path=str(path)) from exc
    v = _Violations()
    manifest = manifest_from_dict(obj, v)
    if manifest is not None and check_paths:
        base = path.parent
        for img in manifest.images:
            for ref in _referenced_paths(img):
                if not (base / ref).is_file():
                    v.add(f"{img.image_id}: referenced file {ref!r} does not exist")
    if v.items or manifest is None:
        raise ManifestError(v.items, path=str(path))
    return manifest


def _referenced_paths(img: ManifestImage) -> list[str]:
    refs = [img.mask_file]
    refs.extend(img.variant_logit_files.values())
    refs.extend(img.attribution_files.values())
    if img.embedding_file is not None:
        refs.append(img.embedding_file)
    return refs


# ---------------------------------------------------------------------------
# Fully validated dataset load

@dataclass(frozen=True)
class LoadedDataset:
    manifest: Manifest
    records: tuple[ImageRecord, ...]
    plans: dict[str, PerturbationPlan]
    embeddings: dict[str, np.ndarray]

    @property
    def class_count(self) -> int:
        return self.manifest.class_count

    @property
    def dataset_name(self) -> str:
        return self.manifest.dataset_name

    def method_mode_pairs(self) -> list[tuple[str, ClassMode]]:
        pairs = {key for rec in self.records for key in rec.attributions}
        return sorted(pairs, key=lambda mm: (mm[0], mm[1].value))


def load_dataset(manifest_path: str | Path) -> LoadedDataset:
    """Load and deep-validate everything a manifest references.

    Validation is total: every mask, logit file and raster is checked and all
    violations are reported together in one :class:`ManifestError`.
    """
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    base = manifest_path.parent
    v = _Violations()
    records: list[ImageRecord] = []
    plans: dict[str, PerturbationPlan] = {}
    embeddings: dict[str, np.ndarray] = {}
    embed_dim: int | None = None

    for img in manifest.images:
        annotation = None
        try:
            annotation = read_mask(base / img.mask_file, image_id=img.image_id)
        except ProtocolError as exc:
            v.add(str(exc))
        if annotation is not None and annotation.part_ids != img.part_ids:
            v.add(
                f"{img.image_id}: manifest part_ids {list(img.part_ids)} do not match mask parts "
                f"{list(annotation.part_ids)}"
            )
            annotation = None

        variants: dict[PartSubset, LogitRecord] = {}
        for subset, rel in sorted(img.variant_logit_files.items()):
            try:
                rec = read_logits(base / rel, class_count=manifest.class_count)
            except ProtocolError as exc:
                v.add(str(exc))
                continue
            if rec.image_id != img.image_id:
                v.add(f"{img.image_id}: logits file {rel!r} is for image {rec.image_id!r}")
                continue
            if rec.variant != subset:
                v.add(
                    f"{img.image_id}: logits file {rel!r} declares subset "
                    f"{subset_key(rec.variant)!r}, manifest says {subset_key(subset)!r}"
                )
                continue
            variants[subset] = rec

        attributions: dict[tuple[str, ClassMode], AttributionMap] = {}
        for (method, mode), rel in sorted(img.attribution_files.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            try:
                values = read_raster(base / rel)
            except ProtocolError as exc:
                v.add(str(exc))
                continue
            if annotation is not None and values.shape != annotation.mask.shape:
                v.add(
                    f"{img.image_id}: attribution {rel!r} shape {values.shape} does not match mask "
                    f"shape {annotation.mask.shape}"
                )
                continue
            attributions[(method, mode)] = AttributionMap(
                image_id=img.image_id, method_id=method, class_mode=mode, values=values
            )

        if img.embedding_file is not None:
            try:
                emb = read_raster(base / img.embedding_file)
                if emb.shape[0] != 1:
                    v.add(f"{img.image_id}: embedding must be a 1 x d raster, got {emb.shape}")
                else:
                    if embed_dim is None:
                        embed_dim = emb.shape[1]
                    if emb.shape[1] != embed_dim:
                        v.add(f"{img.image_id}: embedding dimension {emb.shape[1]} != {embed_dim}")
                    else:
                        embeddings[img.image_id] = emb.ravel().astype(np.float64)
            except ProtocolError as exc:
                v.add(str(exc))

        if img.plan is not None:
            budget = manifest.plan_budget if manifest.plan_budget is not None else max(len(img.plan), 1)
            try:
                plan = PerturbationPlan(image_id=img.image_id, subsets=img.plan, budget=budget)
                if budget >= len(img.part_ids):
                    singles = {(p,) for p in img.part_ids}
                    if not singles <= set(plan.subsets):
                        raise ProtocolError(f"{img.image_id}: plan is missing singleton subsets")
                plans[img.image_id] = plan
            except Exception as exc:
                v.add(f"{img.image_id}: invalid plan: {exc}")

        if annotation is None:
            continue
        if () not in variants:
            v.add(f"{img.image_id}: no logits for the original image (subset 'orig')")
            continue
        try:
            records.append(
                ImageRecord(
                    annotation=annotation,
                    ground_truth_label=img.ground_truth_label,
                    variants=variants,
                    attributions=attributions,
                )
            )
        except ProtocolError as exc:
            v.add(str(exc))

    if v.items:
        raise ManifestError(v.items, path=str(manifest_path))
    records.sort(key=lambda r: r.image_id)
    return LoadedDataset(manifest=manifest, records=tuple(records), plans=plans, embeddings=embeddings)


def dataset_cloud(dataset: LoadedDataset, name: str | None = None) -> LabeledPointCloud:
    """Assemble a labeled point cloud from per-image embedding files."""
    if not dataset.embeddings:
        raise ProtocolError("dataset has no embedding files")
    ids = sorted(dataset.embeddings)
    labels = {img.image_id: img.ground_truth_label for img in dataset.manifest.images}
    points = np.stack([dataset.embeddings[i] for i in ids])
    return LabeledPointCloud(
        points=points,
        labels=np.asarray([labels[i] for i in ids], dtype=np.int64),
        name=name if name is not None else dataset.dataset_name,
    )
