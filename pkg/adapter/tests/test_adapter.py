"""Adapter unit tests: backends, writers, model determinism, explainers, variants."""

import json
import struct
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from parteval_adapter.inpaint import BACKENDS, get_backend, remove_parts
from parteval_adapter.model import Classifier
from parteval_adapter.pipeline import generate_variants, read_manifest
from parteval_adapter.protocol import parse_subset_key, subset_key, write_logits, write_raster


class TestInpaintBackends:
    def _scene(self):
        rng = np.random.default_rng(0)
        image = rng.integers(0, 255, size=(12, 12, 3), dtype=np.uint8)
        mask = np.zeros((12, 12), dtype=np.uint8)
        mask[2:6, 2:6] = 1
        mask[6:10, 2:6] = 2
        return image, mask

    @pytest.mark.parametrize("name", ["telea", "gray", "background-mean"])
    def test_outside_region_untouched(self, name):
        image, mask = self._scene()
        out = remove_parts(image, mask, (1,), get_backend(name))
        outside = mask != 1
        assert np.array_equal(out[outside], image[outside])
        assert not np.array_equal(out[mask == 1], image[mask == 1])

    def test_gray_fill_value(self):
        image, mask = self._scene()
        out = remove_parts(image, mask, (1, 2), get_backend("gray"))
        assert (out[mask > 0] == 128).all()

    def test_background_mean_value(self):
        image, mask = self._scene()
        out = remove_parts(image, mask, (1,), get_backend("background-mean"))
        expected = np.round(image[mask != 1].reshape(-1, 3).mean(axis=0)).astype(np.uint8)
        assert np.array_equal(out[mask == 1][0], expected)

    def test_telea_deterministic(self):
        image, mask = self._scene()
        a = remove_parts(image, mask, (2,), get_backend("telea"))
        b = remove_parts(image, mask, (2,), get_backend("telea"))
        assert np.array_equal(a, b)

    def test_empty_subset_rejected(self):
        image, mask = self._scene()
        with pytest.raises(ValueError):
            remove_parts(image, mask, (7,), get_backend("gray"))

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            get_backend("migan-unavailable")

    def test_registry_has_defaults(self):
        assert {"telea", "gray", "background-mean"} <= set(BACKENDS)


class TestProtocolWriters:
    def test_raster_byte_layout(self, tmp_path):
        path = tmp_path / "a.ingf"
        arr = np.array([[1.5, -2.0]], dtype=np.float32)
        write_raster(path, arr)
        data = path.read_bytes()
        assert data[:4] == b"INGF"
        assert struct.unpack("<II", data[4:12]) == (1, 2)
        assert np.frombuffer(data[12:], dtype="<f4").tolist() == [1.5, -2.0]
        assert not list(tmp_path.glob("*.tmp"))

    def test_logits_schema(self, tmp_path):
        path = tmp_path / "l.json"
        write_logits(path, "img0", (3, 1), [0.25, -1.0])
        obj = json.loads(path.read_text())
        assert obj == {"image_id": "img0", "subset": "1-3", "logits": [0.25, -1.0]}

    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_logits(tmp_path / "l.json", "x", (), [float("nan")])
        with pytest.raises(ValueError):
            write_raster(tmp_path / "r.ingf", np.array([[np.inf]]))

    def test_subset_keys(self):
        assert subset_key(()) == "orig"
        assert subset_key((3, 1)) == "1-3"
        assert parse_subset_key("1-3") == (1, 3)
        assert parse_subset_key("orig") == ()


class TestModel:
    def test_identical_input_identical_logits(self, toy_dataset):
        root, spec = toy_dataset
        clf = Classifier(spec)
        image = next((root / "images").glob("*.png"))
        a = clf.logits(image)
        b = clf.logits(image)
        assert np.array_equal(a, b)
        assert a.shape == (3,)

    def test_learned_training_set(self, toy_dataset):
        root, spec = toy_dataset
        clf = Classifier(spec)
        labels = json.loads((root / "labels.json").read_text())
        hits = sum(
            int(np.argmax(clf.logits(root / "images" / f"{image_id}.png"))) == label
            for image_id, label in labels.items()
        )
        assert hits == len(labels)


class TestExplainers:
    def test_rasters_match_mask_dims_and_are_finite(self, toy_dataset):
        from parteval_adapter.explain import REGISTRY

        root, spec = toy_dataset
        clf = Classifier(spec)
        image = root / "images" / "toy0.png"
        mask = np.asarray(Image.open(root / "masks" / "toy0.png"))
        for explainer in REGISTRY.values():
            raster = explainer.fn(clf, image, 0, mask.shape)
            assert raster.shape == mask.shape
            assert np.all(np.isfinite(raster))

    def test_attention_methods_class_independent(self):
        from parteval_adapter.explain import get_explainer

        assert not get_explainer("ram").class_dependent
        assert not get_explainer("rollout").class_dependent
        assert get_explainer("gradsal").class_dependent


class TestVariants:
    def test_counts_match_plan(self, adapter_config, pipeline_manifest):
        manifest = read_manifest(pipeline_manifest)
        for img in manifest["images"]:
            plan = img["plan"]
            parts = img["part_ids"]
            assert len(plan) == 2 ** len(parts) - 1
            assert set(img["variant_logit_files"]) == set(plan) | {"orig"}

    def test_rerun_reproduces_file_list(self, adapter_config, pipeline_manifest, tmp_path):
        from dataclasses import replace

        first = sorted(p.name for p in (Path(adapter_config.out_dir) / "variants").iterdir())
        again = replace(adapter_config, out_dir=str(tmp_path / "protocol2"))
        from parteval_adapter.pipeline import run_pipeline

        run_pipeline(again)
        second = sorted(p.name for p in (tmp_path / "protocol2" / "variants").iterdir())
        assert first == second

    def test_no_temp_files_left(self, adapter_config, pipeline_manifest):
        leftovers = list(Path(adapter_config.out_dir).rglob("*.tmp"))
        assert leftovers == []
