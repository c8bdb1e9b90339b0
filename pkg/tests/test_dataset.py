from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from defectlab.dataset import (
    DatasetManifest,
    PoolState,
    PreprocessConfig,
    Sample,
    init_pools,
    load_manifest,
    preprocess_image,
    save_manifest,
    scan_directory,
)
from defectlab.errors import (
    ClassCountError,
    DecodeError,
    DuplicateIdError,
    EmptyDatasetError,
    LabelPrecedenceError,
    MissingLabelError,
    ParseError,
    RangeError,
    StructureError,
)

from synth import build_image_tree


def _tiny_tree(root: Path, per_class: int = 2) -> Path:
    return build_image_tree(
        root, {"train": 2 * per_class, "validation": 2 * per_class,
               "test": 2 * per_class}, side=16, seed=3,
    )


class TestScanDirectory:
    def test_counts_and_labels(self, tmp_path):
        manifest = scan_directory(_tiny_tree(tmp_path / "d"))
        assert len(manifest.samples) == 12
        assert manifest.split_counts() == {"train": 4, "validation": 4, "test": 4}
        assert manifest.class_names == ("defect", "ok")  # sorted subdirectory names
        for s in manifest.samples:
            expected = 0 if "/defect/" in s.id else 1
            assert s.true_label == expected
            assert s.assigned_label is None

    def test_three_class_dirs_rejected(self, tmp_path):
        root = _tiny_tree(tmp_path / "d")
        (root / "train" / "third").mkdir()
        with pytest.raises(ClassCountError):
            scan_directory(root)

    def test_missing_split_rejected(self, tmp_path):
        root = _tiny_tree(tmp_path / "d")
        import shutil

        shutil.rmtree(root / "validation")
        with pytest.raises(StructureError):
            scan_directory(root)

    def test_missing_root_rejected(self, tmp_path):
        with pytest.raises(StructureError):
            scan_directory(tmp_path / "nope")

    def test_empty_dataset_rejected(self, tmp_path):
        root = tmp_path / "d"
        for split in ("train", "validation", "test"):
            for cls in ("a", "b"):
                (root / split / cls).mkdir(parents=True)
        with pytest.raises(EmptyDatasetError):
            scan_directory(root)

    def test_scan_determinism_byte_identical(self, tmp_path):
        root = _tiny_tree(tmp_path / "d")
        m1 = scan_directory(root)
        m2 = scan_directory(root)
        assert m1 == m2
        p1, p2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
        save_manifest(m1, p1)
        save_manifest(m2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_no_cross_split_leakage(self, tmp_path):
        manifest = scan_directory(_tiny_tree(tmp_path / "d"))
        splits = [set(manifest.split_ids(s)) for s in ("train", "validation", "test")]
        for i in range(3):
            for j in range(i + 1, 3):
                assert not splits[i] & splits[j]

    def test_flat_layout_requires_manifest(self, tmp_path):
        root = tmp_path / "d"
        root.mkdir()
        with pytest.raises(StructureError):
            scan_directory(root, layout="flat")

    def test_flat_layout_loads_manifest(self, tmp_path):
        root = _tiny_tree(tmp_path / "d")
        manifest = scan_directory(root)
        save_manifest(manifest, root / "manifest.csv")
        again = scan_directory(root, layout="flat")
        assert again == manifest

    def test_case_study_scale_split_counts(self, tmp_path):
        # 2,000 / 1,000 / 1,000 balanced images (tiny pixels, full bookkeeping)
        root = tmp_path / "big"
        pixel = Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8))
        for split, n in (("train", 2000), ("validation", 1000), ("test", 1000)):
            for cls in ("class_0", "class_1"):
                directory = root / split / cls
                directory.mkdir(parents=True)
                for i in range(n // 2):
                    pixel.save(directory / f"{i:05d}.png")
        manifest = scan_directory(root)
        assert manifest.split_counts() == {
            "train": 2000, "validation": 1000, "test": 1000,
        }
        labels = [s.true_label for s in manifest.split_samples("train")]
        assert labels.count(0) == labels.count(1) == 1000


class TestManifestCsv:
    def test_round_trip_identity(self, tmp_path):
        manifest = scan_directory(_tiny_tree(tmp_path / "d"))
        manifest.samples[0].assign_label(1, source="human")
        path = tmp_path / "m.csv"
        save_manifest(manifest, path)
        assert load_manifest(path) == manifest

    def test_line_count_header_plus_rows(self, tmp_path):
        manifest = scan_directory(_tiny_tree(tmp_path / "d"))
        path = tmp_path / "m.csv"
        save_manifest(manifest, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 13
        assert lines[0] == "id,image_ref,split,true_label,assigned_label"

    def test_empty_manifest_rejected(self, tmp_path):
        with pytest.raises(EmptyDatasetError):
            save_manifest(DatasetManifest(samples=[]), tmp_path / "m.csv")

    def test_single_row_manifest(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text(
            "id,image_ref,split,true_label,assigned_label\n"
            "a.png,a.png,train,1,\n"
        )
        manifest = load_manifest(path)
        assert len(manifest.samples) == 1
        assert manifest.samples[0].true_label == 1
        assert manifest.samples[0].assigned_label is None

    def test_invalid_split_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(
            "id,image_ref,split,true_label,assigned_label\n"
            "a.png,a.png,train,1,\n"
            "b.png,b.png,eval,0,\n"
        )
        with pytest.raises(ParseError) as excinfo:
            load_manifest(path)
        assert excinfo.value.line == 3
        assert "line 3" in str(excinfo.value)

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "dup.csv"
        path.write_text(
            "id,image_ref,split,true_label,assigned_label\n"
            "a.png,a.png,train,1,\n"
            "a.png,a.png,train,0,\n"
        )
        with pytest.raises(DuplicateIdError):
            load_manifest(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("id,path,split\na,b,train\n")
        with pytest.raises(ParseError) as excinfo:
            load_manifest(path)
        assert excinfo.value.line == 1

    def test_assigned_labels_round_trip_with_provenance(self, tmp_path):
        manifest = scan_directory(_tiny_tree(tmp_path / "d"))
        for s in manifest.samples:
            s.assign_label(s.true_label, source="oracle")
        path = tmp_path / "m.csv"
        save_manifest(manifest, path)
        header = path.read_text().splitlines()[0]
        assert header == "id,image_ref,split,true_label,assigned_label,label_source"
        loaded = load_manifest(path)
        assert loaded == manifest


@st.composite
def manifests(draw):
    n = draw(st.integers(min_value=1, max_value=12))
    ids = [f"s{i:02d}.png" for i in range(n)]
    samples = []
    for sid in ids:
        split = draw(st.sampled_from(("train", "validation", "test")))
        true_label = draw(st.sampled_from((None, 0, 1)))
        assigned = draw(st.sampled_from((None, 0, 1)))
        source = draw(st.sampled_from((None, "human", "oracle"))) if assigned is not None else None
        samples.append(Sample(id=sid, image_ref=sid, split=split,
                              true_label=true_label, assigned_label=assigned,
                              label_source=source))
    return DatasetManifest(samples=samples, class_names=("neg", "pos"),
                           source_root=Path("/data"), created_at="2026-01-01T00:00:00+00:00")


class TestManifestProperties:
    @settings(max_examples=40, deadline=None)
    @given(manifest=manifests())
    def test_save_load_round_trip(self, manifest, tmp_path_factory):
        path = tmp_path_factory.mktemp("rt") / "m.csv"
        save_manifest(manifest, path)
        loaded = load_manifest(path)
        assert sorted(loaded.samples, key=lambda s: s.id) == sorted(
            manifest.samples, key=lambda s: s.id
        )
        assert loaded.class_names == manifest.class_names


class TestLabels:
    def test_assign_label_no_silent_overwrite(self):
        s = Sample(id="a", image_ref="a", split="train")
        s.assign_label(1, source="human")
        with pytest.raises(LabelPrecedenceError):
            s.assign_label(0, source="oracle")
        s.correct_label(0, source="human")
        assert s.assigned_label == 0

    def test_effective_label_prefers_assignment(self):
        s = Sample(id="a", image_ref="a", split="train", true_label=0)
        assert s.effective_label() == 0
        s.assign_label(1, source="human")
        assert s.effective_label() == 1


class TestInitPools:
    def test_zero_seed_all_unlabeled(self, tmp_path):
        manifest = scan_directory(_tiny_tree(tmp_path / "d"))
        pool = init_pools(manifest, seed_size=0, rng_seed=1)
        assert pool.labeled_ids == []
        assert len(pool.unlabeled_ids) == 4

    def test_full_seed_all_labeled(self, tmp_path):
        manifest = scan_directory(_tiny_tree(tmp_path / "d"))
        pool = init_pools(manifest, seed_size=4, rng_seed=1)
        assert pool.unlabeled_ids == []
        assert len(pool.labeled_ids) == 4
        for sid in pool.labeled_ids:
            sample = manifest.by_id(sid)
            assert sample.assigned_label == sample.true_label

    def test_seed_determinism(self, tmp_path):
        m1 = scan_directory(_tiny_tree(tmp_path / "a"))
        m2 = scan_directory(_tiny_tree(tmp_path / "b"))
        p1 = init_pools(m1, seed_size=2, rng_seed=42)
        p2 = init_pools(m2, seed_size=2, rng_seed=42)
        assert p1.labeled_ids == p2.labeled_ids
        assert p1.unlabeled_ids == p2.unlabeled_ids

    def test_oversized_seed_rejected(self, tmp_path):
        manifest = scan_directory(_tiny_tree(tmp_path / "d"))
        with pytest.raises(RangeError):
            init_pools(manifest, seed_size=5)

    def test_seed_without_truth_rejected(self, tmp_path):
        manifest = scan_directory(_tiny_tree(tmp_path / "d"))
        manifest.split_samples("train")[0].true_label = None
        with pytest.raises(MissingLabelError):
            init_pools(manifest, seed_size=1)

    def test_pool_conservation_after_mutations(self, tmp_path):
        manifest = scan_directory(_tiny_tree(tmp_path / "d"))
        pool = init_pools(manifest)
        train_ids = list(pool.unlabeled_ids)
        for sid in train_ids:
            manifest.by_id(sid).assign_label(0, source="oracle")
            pool.mark_labeled([sid])
            pool.check(manifest)
            assert pool.size == len(train_ids)
        assert pool.unlabeled_ids == []


class TestPreprocess:
    def test_shape_contract_at_default_side(self, tmp_path):
        path = tmp_path / "img.png"
        arr = np.random.default_rng(0).integers(0, 255, (480, 640, 3), dtype=np.uint8)
        Image.fromarray(arr).save(path)
        sample = Sample(id="img.png", image_ref=str(path), split="train")
        out = preprocess_image(sample, PreprocessConfig())
        assert out.shape == (224, 224, 3)
        assert out.dtype == np.float32

    def test_grayscale_replicated(self, tmp_path):
        path = tmp_path / "gray.png"
        arr = np.random.default_rng(0).integers(0, 255, (40, 40), dtype=np.uint8)
        Image.fromarray(arr, mode="L").save(path)
        sample = Sample(id="gray.png", image_ref=str(path), split="train")
        out = preprocess_image(sample, PreprocessConfig(side=32))
        assert out.shape == (32, 32, 3)
        # undoing each channel's normalization recovers the same gray values
        raw0 = out[..., 0] * 0.229 + 0.485
        raw1 = out[..., 1] * 0.224 + 0.456
        raw2 = out[..., 2] * 0.225 + 0.406
        assert np.allclose(raw0, raw1, atol=1e-5)
        assert np.allclose(raw1, raw2, atol=1e-5)

    def test_truncated_file_decode_error(self, tmp_path):
        path = tmp_path / "trunc.png"
        good = tmp_path / "good.png"
        Image.fromarray(np.zeros((32, 32, 3), dtype=np.uint8)).save(good)
        path.write_bytes(good.read_bytes()[:40])
        sample = Sample(id="trunc.png", image_ref=str(path), split="train")
        with pytest.raises(DecodeError) as excinfo:
            preprocess_image(sample, PreprocessConfig(side=32))
        assert excinfo.value.sample_id == "trunc.png"

    def test_missing_file_decode_error(self):
        sample = Sample(id="x.png", image_ref="/nonexistent/x.png", split="train")
        with pytest.raises(DecodeError):
            preprocess_image(sample, PreprocessConfig(side=32))

    def test_deterministic_and_normalized(self, tmp_path):
        path = tmp_path / "img.png"
        Image.fromarray(np.full((20, 20, 3), 128, dtype=np.uint8)).save(path)
        sample = Sample(id="img.png", image_ref=str(path), split="train")
        cfg = PreprocessConfig(side=16, mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5))
        a = preprocess_image(sample, cfg)
        b = preprocess_image(sample, cfg)
        assert np.array_equal(a, b)
        assert abs(float(a.mean()) - (128 / 255 - 0.5) / 0.5) < 1e-6


class TestPoolState:
    def test_overlapping_pools_rejected(self):
        with pytest.raises(DuplicateIdError):
            PoolState(labeled_ids=["a"], unlabeled_ids=["a", "b"])
