"""End-to-end adapter pipeline: skeleton manifest -> engine plan -> variants,
logits, attributions -> final manifest.

The engine is invoked through its CLI; everything else crosses the file
formats in :mod:`parteval_adapter.protocol`.
"""

from __future__ import annotations

import json
import logging
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .explain import get_explainer
from .inpaint import get_backend, remove_parts
from .model import Classifier, ClassifierSpec
from .protocol import (
    atomic_write_bytes,
    mask_part_ids,
    parse_subset_key,
    read_manifest,
    read_mask,
    skeleton_manifest,
    subset_key,
    write_logits,
    write_manifest,
    write_raster,
)

logger = logging.getLogger(__name__)

CLASS_MODES = ("predicted", "target")


@dataclass
class AdapterConfig:
    dataset_name: str
    class_count: int
    images_dir: str
    masks_dir: str
    labels_file: str
    out_dir: str
    model: ClassifierSpec
    methods: list[str] = field(default_factory=lambda: ["gradsal", "ram", "rollout"])
    class_modes: list[str] = field(default_factory=lambda: ["predicted", "target"])
    inpainting_backend: str = "telea"
    budget: int = 32
    engine_command: list[str] = field(default_factory=lambda: [sys.executable, "-m", "parteval"])

    @classmethod
    def from_file(cls, path: str | Path) -> "AdapterConfig":
        obj = json.loads(Path(path).read_text())
        model = obj.pop("model")
        spec = ClassifierSpec(
            model_id=model["id"],
            checkpoint=model["checkpoint"],
            num_labels=obj["class_count"],
            image_size=model.get("image_size", 16),
            patch_size=model.get("patch_size", 4),
            hidden_size=model.get("hidden_size", 32),
            num_layers=model.get("num_layers", 2),
            num_heads=model.get("num_heads", 2),
        )
        return cls(model=spec, **obj)


def scan_images(config: AdapterConfig) -> list[dict]:
    labels = json.loads(Path(config.labels_file).read_text())
    entries = []
    for image_path in sorted(Path(config.images_dir).glob("*.png")):
        image_id = image_path.stem
        mask_path = Path(config.masks_dir) / f"{image_id}.png"
        if not mask_path.is_file():
            raise FileNotFoundError(f"no mask for image {image_id!r} at {mask_path}")
        if image_id not in labels:
            raise KeyError(f"no ground-truth label for image {image_id!r}")
        entries.append({"image_id": image_id, "image": image_path, "mask": mask_path,
                        "label": int(labels[image_id])})
    if not entries:
        raise FileNotFoundError(f"no PNG images under {config.images_dir}")
    return entries


def write_skeleton(config: AdapterConfig, entries: list[dict]) -> Path:
    out = Path(config.out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    images = []
    for e in entries:
        mask = read_mask(e["mask"])
        mask_rel = f"masks/{e['image_id']}.png"
        atomic_write_bytes(out / mask_rel, Path(e["mask"]).read_bytes())
        images.append(
            {
                "image_id": e["image_id"],
                "ground_truth_label": e["label"],
                "mask_file": mask_rel,
                "part_ids": list(mask_part_ids(mask)),
                "variant_logit_files": {},
                "attribution_files": {},
            }
        )
    manifest = skeleton_manifest(config.dataset_name, config.class_count, images)
    path = out / "manifest.json"
    write_manifest(path, manifest)
    return path


def run_engine_plan(config: AdapterConfig, manifest_path: Path) -> None:
    cmd = [*config.engine_command, "plan", "--manifest", str(manifest_path),
           "--budget", str(config.budget)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"engine plan failed: {proc.stderr.strip()}")


def generate_variants(config: AdapterConfig, entries: list[dict], manifest: dict) -> dict[str, dict[str, Path]]:
    """Inpaint every planned subset; failures leave the subset missing."""
    backend = get_backend(config.inpainting_backend)
    out = Path(config.out_dir)
    (out / "variants").mkdir(exist_ok=True)
    by_id = {e["image_id"]: e for e in entries}
    produced: dict[str, dict[str, Path]] = {}
    for img in manifest["images"]:
        image_id = img["image_id"]
        entry = by_id[image_id]
        image = np.asarray(Image.open(entry["image"]).convert("RGB"))
        mask = read_mask(entry["mask"])
        files: dict[str, Path] = {"orig": Path(entry["image"])}
        for key in img.get("plan", []):
            subset = parse_subset_key(key)
            target = out / "variants" / f"{image_id}_{key}.png"
            try:
                patched = remove_parts(image, mask, subset, backend)
            except Exception:
                logger.exception("inpainting failed for %s subset %s; recorded as missing", image_id, key)
                continue
            Image.fromarray(patched).save(target)
            files[key] = target
        produced[image_id] = files
    return produced


def run_model(config: AdapterConfig, clf: Classifier, variant_files: dict[str, dict[str, Path]]) -> dict[str, dict[str, str]]:
    out = Path(config.out_dir)
    (out / "logits").mkdir(exist_ok=True)
    logit_files: dict[str, dict[str, str]] = {}
    for image_id in sorted(variant_files):
        logit_files[image_id] = {}
        for key, image_path in sorted(variant_files[image_id].items()):
            rel = f"logits/{image_id}_{key}.json"
            write_logits(out / rel, image_id, parse_subset_key(key), clf.logits(image_path))
            logit_files[image_id][key] = rel
    return logit_files


def run_explainers(
    config: AdapterConfig,
    clf: Classifier,
    entries: list[dict],
) -> tuple[dict[str, dict[str, dict[str, str]]], list[dict]]:
    """Attribution rasters per (image, method, mode); unsupported pairs are skipped."""
    out = Path(config.out_dir)
    (out / "attr").mkdir(exist_ok=True)
    attr_files: dict[str, dict[str, dict[str, str]]] = {}
    skipped: list[dict] = []
    skipped_pairs = set()
    for entry in entries:
        image_id = entry["image_id"]
        mask = read_mask(entry["mask"])
        predicted = int(np.argmax(clf.logits(entry["image"])))
        attr_files[image_id] = {}
        for method_id in config.methods:
            explainer = get_explainer(method_id)
            per_mode: dict[str, str] = {}
            for mode in config.class_modes:
                if mode not in CLASS_MODES:
                    raise ValueError(f"unknown class mode {mode!r}")
                if mode == "target" and not explainer.class_dependent:
                    if (method_id, mode) not in skipped_pairs:
                        skipped_pairs.add((method_id, mode))
                        skipped.append(
                            {"method_id": method_id, "class_mode": mode,
                             "reason": "class-independent method"}
                        )
                    continue
                class_idx = entry["label"] if mode == "target" else predicted
                raster = explainer.fn(clf, entry["image"], class_idx, mask.shape)
                if not np.all(np.isfinite(raster)):
                    raise ValueError(f"{method_id} produced non-finite values for {image_id}")
                rel = f"attr/{image_id}_{method_id}_{mode}.ingf"
                write_raster(out / rel, raster)
                per_mode[mode] = rel
            if per_mode:
                attr_files[image_id][method_id] = per_mode
    return attr_files, skipped


def run_pipeline(config: AdapterConfig) -> Path:
    entries = scan_images(config)
    manifest_path = write_skeleton(config, entries)
    run_engine_plan(config, manifest_path)
    manifest = read_manifest(manifest_path)

    clf = Classifier(config.model)
    variant_files = generate_variants(config, entries, manifest)
    logit_files = run_model(config, clf, variant_files)
    attr_files, skipped = run_explainers(config, clf, entries)

    for img in manifest["images"]:
        image_id = img["image_id"]
        img["variant_logit_files"] = logit_files.get(image_id, {})
        img["attribution_files"] = attr_files.get(image_id, {})
    manifest["provenance"] = {
        "adapter": "parteval-adapter",
        "model_id": config.model.model_id,
        "inpainting_backend": config.inpainting_backend,
        "preprocessing": clf.preprocessing_description(),
        "attribution_upsampling": "bilinear",
        "skipped_explanations": skipped,
    }
    write_manifest(manifest_path, manifest)
    return manifest_path
