"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion lines.
"""

import json
import time
from itertools import chain, combinations

import numpy as np
import pytest

from parteval.cli import main as cli_main
from parteval.core import Aggregation, ClassMode, Direction, ScoreFn
from parteval.errors import PlanError, ProtocolError
from parteval.importance import PartImportance, aggregate, select_threshold_subset
from parteval.metrics import deletion_check, preservation_check, single_deletion, perturbation_curve, spearman_rho
from parteval.otdd import LabeledPointCloud, cloud_from_rasters, otdd_distance, sinkhorn
from parteval.planner import enumerate_plan
from parteval.protocol import (
    Manifest,
    ManifestImage,
    manifest_to_dict,
    read_manifest,
    read_raster,
    write_manifest,
    write_raster,
)

import oracles
from conftest import build_fixture, write_fixture_dataset
from test_metrics import complete_random_records, make_pis, oracle_spearman, random_tied_vectors
from test_otdd import lp_transport_cost


def report_pass(name: str) -> None:
    print(f"\nACCEPTANCE {name}: PASS")


def test_planner_oracle():
    start = time.perf_counter()
    for num_parts in range(1, 7):
        parts = list(range(1, num_parts + 1))
        for budget in range(1, 41):
            if budget < num_parts:
                with pytest.raises(PlanError):
                    enumerate_plan(parts, budget)
                continue
            expected = sorted(
                chain.from_iterable(combinations(parts, r) for r in range(1, num_parts + 1)),
                key=lambda s: (len(s), s),
            )[:budget]
            assert enumerate_plan(parts, budget).subsets == tuple(expected)
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0, f"planner oracle sweep took {elapsed:.2f}s"
    report_pass("planner-oracle")


def test_spearman_oracle():
    rng = np.random.default_rng(101)
    compared = 0
    for _ in range(1000):
        n = int(rng.integers(2, 11))
        x, y = random_tied_vectors(rng, n)
        expected = oracle_spearman(x, y)
        got = spearman_rho(x, y)
        if expected is None:
            assert got is None
        else:
            assert abs(got - expected) <= 1e-10
            compared += 1
    assert compared >= 600
    report_pass("spearman-oracle")


def test_metric_identities():
    rng = np.random.default_rng(103)
    for n_images in (1, 2, 3, 5, 7, 9, 11, 13, 17, 20):
        records, values = complete_random_records(rng, n_images)
        pis = make_pis(records, values)
        for t in (0.15, 0.2, 0.4, 0.5, 0.6, 0.8, 0.85):
            pc = preservation_check(records, pis, t, direction=Direction.LEAST_FIRST)
            dc = deletion_check(records, pis, t, direction=Direction.LEAST_FIRST)
            assert pc.value + dc.value == 100.0

    ts = [float(t) for t in np.linspace(0.02, 0.98, 25)]
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        pi = PartImportance(
            image_id="x", method_id="m", class_mode=ClassMode.PREDICTED,
            values={k + 1: float(v) for k, v in enumerate(rng.normal(size=n))},
            aggregation=Aggregation.SUM_PER_PART,
        )
        for direction in Direction:
            previous: set = set()
            for t in ts:
                subset = set(select_threshold_subset(pi, t, direction))
                assert previous <= subset
                previous = subset
    report_pass("metric-identities")


def test_synthetic_end_to_end_fidelity():
    start = time.perf_counter()
    fx = build_fixture(seed=7, n_images=20, part_range=(3, 5))

    def pis_for(method, agg):
        return {
            fi.record.image_id: aggregate(fi.record.attributions[(method, ClassMode.PREDICTED)],
                                          fi.record.annotation, agg)
            for fi in fx.images
        }

    records = fx.records
    sd = single_deletion(records, pis_for("planted", Aggregation.SUM_PER_PART),
                         score_fn=ScoreFn.RAW_LOGIT)
    assert abs(sd.value - 100.0) <= 0.01
    sd_neg = single_deletion(records, pis_for("planted-neg", Aggregation.SUM_PER_PART),
                             score_fn=ScoreFn.RAW_LOGIT)
    assert abs(sd_neg.value - 0.0) <= 0.01

    mean_pis = pis_for("planted", Aggregation.MEAN_PER_PART)
    pos = perturbation_curve(records, mean_pis, Direction.MOST_FIRST)
    neg = perturbation_curve(records, mean_pis, Direction.LEAST_FIRST)
    assert pos.value < neg.value

    inv_pis = pis_for("planted-neg", Aggregation.MEAN_PER_PART)
    ipos = perturbation_curve(records, inv_pis, Direction.MOST_FIRST)
    ineg = perturbation_curve(records, inv_pis, Direction.LEAST_FIRST)
    assert ipos.value > ineg.value

    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"synthetic fidelity run took {elapsed:.2f}s"
    report_pass("synthetic-end-to-end-fidelity")


def test_sinkhorn_vs_exact_lp():
    start = time.perf_counter()
    rng = np.random.default_rng(107)
    for _ in range(50):
        n, m = rng.integers(1, 7, size=2)
        cost = rng.random((n, m)) * float(rng.choice([0.5, 1.0, 3.0]))
        mu = rng.random(n) + 0.05
        mu /= mu.sum()
        nu = rng.random(m) + 0.05
        nu /= nu.sum()
        exact = lp_transport_cost(cost, mu, nu)
        # Degenerate instances need a long tail at the final epsilon stage.
        res = sinkhorn(cost, mu, nu, epsilon=1e-4, max_iter=100000)
        assert res.converged
        assert abs(res.cost - exact) <= 0.01 * max(abs(exact), 1e-12) + 1e-9
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0, f"sinkhorn-vs-LP sweep took {elapsed:.2f}s"
    report_pass("sinkhorn-vs-exact-lp")


def test_otdd_properties():
    rng = np.random.default_rng(109)
    pts = rng.normal(size=(14, 5))
    labels = rng.integers(0, 3, size=14)
    a = LabeledPointCloud(points=pts, labels=labels, name="a")
    assert otdd_distance(a, a) <= 1e-6

    b = LabeledPointCloud(points=rng.normal(size=(10, 5)) + 0.3,
                          labels=rng.integers(0, 3, size=10), name="b")
    assert otdd_distance(a, b) == otdd_distance(b, a)

    d = 1.3
    single_a = LabeledPointCloud(points=np.array([[0.0, 0.0]]), labels=np.array([2]), name="pa")
    single_b = LabeledPointCloud(points=np.array([[d, 0.0]]), labels=np.array([2]), name="pb")
    got = otdd_distance(single_a, single_b)
    assert abs(got - 2 * d * d) <= 0.01 * 2 * d * d

    shift = np.array([0.7, -0.4, 1.1, 0.0, 2.0])
    base = otdd_distance(a, b)
    moved = otdd_distance(
        LabeledPointCloud(points=pts + shift, labels=labels, name="a"),
        LabeledPointCloud(points=b.points + shift, labels=b.labels, name="b"),
    )
    assert abs(moved - base) <= 1e-6
    report_pass("otdd-properties")


def _directional_rasters():
    """3-class 16x16 grayscale set: low-contrast objects on a flat background."""
    rng = np.random.default_rng(113)
    background = 0.2
    originals, masked, filled, labels = [], [], [], []
    for i in range(60):
        cls = i % 3
        img = np.full((16, 16), background) + rng.normal(scale=0.01, size=(16, 16))
        r0, c0 = 3 + cls, 2 + 2 * cls
        object_region = (slice(r0, r0 + 7), slice(c0, c0 + 8))
        img[object_region] = 0.3 + 0.02 * cls + rng.normal(scale=0.01, size=(7, 8))
        part_region = (slice(r0, r0 + 7), slice(c0, c0 + 4))
        gray = img.copy()
        gray[part_region] = 0.5
        bg_fill = img.copy()
        bg_fill[part_region] = background
        originals.append(img)
        masked.append(gray)
        filled.append(bg_fill)
        labels.append(cls)
    return originals, masked, filled, labels


def test_directional_alignment_masking_vs_inpainting():
    originals, masked, filled, labels = _directional_rasters()
    original_cloud = cloud_from_rasters(originals, labels, "original", side=16)
    masked_cloud = cloud_from_rasters(masked, labels, "gray-masked", side=16)
    filled_cloud = cloud_from_rasters(filled, labels, "background-filled", side=16)
    d_masked = otdd_distance(original_cloud, masked_cloud)
    d_filled = otdd_distance(original_cloud, filled_cloud)
    assert d_masked > d_filled, (d_masked, d_filled)
    report_pass("directional-paper-alignment")


def _random_manifest(rng, index):
    images = []
    for i in range(int(rng.integers(1, 4))):
        num_parts = int(rng.integers(1, 5))
        parts = tuple(range(1, num_parts + 1))
        plan = enumerate_plan(parts, 32).subsets if rng.random() < 0.7 else None
        variants = {(): "logits/orig.json"}
        for p in parts:
            if rng.random() < 0.8:
                variants[(p,)] = f"logits/s{p}.json"
        attrs = {}
        for m in range(int(rng.integers(0, 3))):
            mode = ClassMode.PREDICTED if rng.random() < 0.7 else ClassMode.TARGET
            attrs[(f"method{m}", mode)] = f"attr/a{m}.ingf"
        images.append(
            ManifestImage(
                image_id=f"im{index:04d}_{i}",
                ground_truth_label=int(rng.integers(0, 5)),
                mask_file=f"masks/{i}.png",
                part_ids=parts,
                plan=plan,
                variant_logit_files=variants,
                attribution_files=attrs,
                embedding_file=f"emb/{i}.ingf" if rng.random() < 0.3 else None,
            )
        )
    provenance = {"seed": index} if rng.random() < 0.5 else None
    return Manifest(
        dataset_name=f"ds{index}",
        class_count=5,
        images=images,
        plan_budget=32 if any(img.plan for img in images) else None,
        provenance=provenance,
    )


def test_protocol_round_trips(tmp_path):
    rng = np.random.default_rng(127)

    raster_path = tmp_path / "payload.ingf"
    for _ in range(1000):
        h, w = rng.integers(1, 9, size=2)
        arr = (rng.normal(scale=rng.choice([1e-3, 1.0, 1e4]), size=(h, w))).astype(np.float32)
        write_raster(raster_path, arr)
        back = read_raster(raster_path)
        assert np.array_equal(back.view(np.uint32), arr.view(np.uint32))

    manifest_path = tmp_path / "manifest.json"
    for index in range(1000):
        manifest = _random_manifest(rng, index)
        write_manifest(manifest_path, manifest)
        first = manifest_path.read_bytes()
        loaded = read_manifest(manifest_path, check_paths=False)
        write_manifest(manifest_path, loaded)
        assert manifest_path.read_bytes() == first
        assert manifest_to_dict(loaded) == manifest_to_dict(manifest)

    # Malformed inputs must be rejected with a diagnostic naming the file.
    bad_raster = tmp_path / "bad.ingf"
    for payload in (b"XXXX", b"INGF" + b"\x01\x00\x00\x00", b"INGF" + b"\x01\x00\x00\x00\x02\x00\x00\x00" + b"\x00" * 4):
        bad_raster.write_bytes(payload)
        with pytest.raises(ProtocolError) as err:
            read_raster(bad_raster)
        assert "bad.ingf" in str(err.value)
    bad_manifest = tmp_path / "bad.json"
    for payload in ("[]", "{}", '{"schema_version": 9, "dataset_name": "x", "class_count": 1, "images": []}'):
        bad_manifest.write_text(payload)
        with pytest.raises(ProtocolError) as err:
            read_manifest(bad_manifest, check_paths=False)
        assert "bad.json" in str(err.value)
    report_pass("protocol-round-trips")


def test_eval_determinism_across_worker_counts(tmp_path):
    fixture = build_fixture(seed=7, n_images=12)
    manifest_path = write_fixture_dataset(tmp_path, fixture)
    outputs = []
    for workers in (1, 4, 16):
        out = tmp_path / f"w{workers}"
        rc = cli_main(["eval", "--manifest", str(manifest_path), "--out", str(out),
                       "--workers", str(workers)])
        assert rc == 0
        outputs.append(((out / "report.json").read_bytes(), (out / "report.csv").read_bytes()))
    assert outputs[0] == outputs[1] == outputs[2]
    json.loads(outputs[0][0].decode())
    report_pass("eval-determinism")
