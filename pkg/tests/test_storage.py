"""On-disk formats: byte-exact layouts, round trips, and failure modes."""

import struct
import tracemalloc

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from regionrank import (
    BoundingBox,
    DataValidationError,
    Dataset,
    DatasetManifest,
    FormatError,
    ManifestEntry,
    MissingInputError,
    Proposal,
    RankVector,
    SelectionConfig,
    SimilarityBlock,
    load_dataset,
    read_block,
    read_image_features,
    read_manifest,
    read_proposals,
    read_ranks,
    read_result,
    select_all,
    validate_dataset,
    write_block,
    write_dataset,
    write_image_features,
    write_manifest,
    write_proposals,
    write_ranks,
    write_result,
)

from conftest import box, make_record


def _proposal(feature, corners=(1.0, 2.0, 9.0, 8.0), group=0, saliency=None):
    return Proposal(
        box=BoundingBox(*corners),
        feature=np.asarray(feature, dtype=np.float32),
        group_id=group,
        saliency=saliency,
    )


# ---------------------------------------------------------------------------
# proposal files

class TestProposalFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "img.lodf"
        original = [
            _proposal([1.0, -2.5, 3.25], group=2, saliency=0.75),
            _proposal([0.0, 0.5, -1.0], corners=(5, 5, 25, 35)),
        ]
        write_proposals(path, original)
        loaded = read_proposals(path)
        assert len(loaded) == 2
        for got, want in zip(loaded, original):
            np.testing.assert_array_equal(got.feature, want.feature)
            assert got.box == want.box
            assert got.group_id == want.group_id
            assert got.saliency == want.saliency

    def test_rewrite_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(3)
        proposals = [
            _proposal(rng.standard_normal(7), corners=(0, 0, 1 + i, 2 + i))
            for i in range(5)
        ]
        first, second = tmp_path / "a.lodf", tmp_path / "b.lodf"
        write_proposals(first, proposals)
        write_proposals(second, read_proposals(first))
        assert first.read_bytes() == second.read_bytes()

    def test_exact_byte_layout(self, tmp_path):
        """The layout is header, features, boxes, groups, saliency -- all
        little-endian."""
        path = tmp_path / "img.lodf"
        write_proposals(
            path,
            [_proposal([1.5, -2.0], corners=(1.0, 2.0, 3.0, 4.0), group=7,
                       saliency=0.25)],
        )
        expected = (
            b"LODF"
            + struct.pack("<III", 1, 1, 2)
            + struct.pack("<2f", 1.5, -2.0)
            + struct.pack("<4f", 1.0, 2.0, 3.0, 4.0)
            + struct.pack("<H", 7)
            + struct.pack("<f", 0.25)
        )
        assert path.read_bytes() == expected

    def test_absent_saliency_stored_as_nan(self, tmp_path):
        path = tmp_path / "img.lodf"
        write_proposals(path, [_proposal([1.0])])
        tail = path.read_bytes()[-4:]
        assert np.isnan(np.frombuffer(tail, dtype="<f4")[0])
        assert read_proposals(path)[0].saliency is None

    def test_mixed_dimensions_rejected(self, tmp_path):
        with pytest.raises(DataValidationError):
            write_proposals(tmp_path / "x.lodf", [_proposal([1.0]), _proposal([1.0, 2.0])])

    def test_group_id_range(self, tmp_path):
        with pytest.raises(DataValidationError):
            write_proposals(tmp_path / "x.lodf", [_proposal([1.0], group=70000)])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.lodf"
        path.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(FormatError, match="magic"):
            read_proposals(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "x.lodf"
        path.write_bytes(b"LODF" + struct.pack("<III", 99, 0, 0))
        with pytest.raises(FormatError, match="version"):
            read_proposals(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "x.lodf"
        write_proposals(path, [_proposal([1.0, 2.0])])
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError, match="truncated"):
            read_proposals(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "x.lodf"
        write_proposals(path, [_proposal([1.0, 2.0])])
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            read_proposals(path)

    def test_degenerate_box_is_a_format_error(self, tmp_path):
        path = tmp_path / "x.lodf"
        write_proposals(path, [_proposal([1.0], corners=(0, 0, 4, 4))])
        raw = bytearray(path.read_bytes())
        # overwrite the box with a zero-area one
        raw[20:36] = struct.pack("<4f", 5.0, 5.0, 5.0, 5.0)
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="proposal 0"):
            read_proposals(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            read_proposals(tmp_path / "absent.lodf")


# ---------------------------------------------------------------------------
# image descriptor matrix

class TestImageFeatureFile:
    def test_round_trip_and_layout(self, tmp_path):
        path = tmp_path / "features.lodi"
        matrix = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], dtype=np.float32)
        write_image_features(path, matrix)
        expected = b"LODI" + struct.pack("<III", 1, 3, 2) + matrix.astype("<f4").tobytes()
        assert path.read_bytes() == expected
        np.testing.assert_array_equal(read_image_features(path), matrix)

    def test_mmap_reads_same_values(self, tmp_path):
        path = tmp_path / "features.lodi"
        matrix = np.random.default_rng(0).random((10, 4)).astype(np.float32)
        write_image_features(path, matrix)
        mapped = read_image_features(path, mmap=True)
        assert isinstance(mapped, np.memmap)
        np.testing.assert_array_equal(np.asarray(mapped), matrix)

    def test_mmap_length_check(self, tmp_path):
        path = tmp_path / "features.lodi"
        write_image_features(path, np.ones((2, 2), dtype=np.float32))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            read_image_features(path, mmap=True)


# ---------------------------------------------------------------------------
# similarity block files

class TestBlockFile:
    def test_empty_block_round_trips(self, tmp_path):
        path = tmp_path / "b.lodb"
        block = SimilarityBlock(
            image_p="a", image_q="b", shape=(3, 4),
            rows=np.array([], dtype=np.uint32),
            cols=np.array([], dtype=np.uint32),
            scores=np.array([], dtype=np.float32),
        )
        write_block(path, block)
        loaded = read_block(path)
        assert loaded.shape == (3, 4)
        assert loaded.nnz == 0
        assert (loaded.image_p, loaded.image_q) == ("a", "b")

    def test_single_entry_block_layout(self, tmp_path):
        path = tmp_path / "b.lodb"
        block = SimilarityBlock(
            image_p="p", image_q="q", shape=(1, 1),
            rows=np.array([0], dtype=np.uint32),
            cols=np.array([0], dtype=np.uint32),
            scores=np.array([0.5], dtype=np.float32),
        )
        write_block(path, block)
        expected = (
            b"LODB"
            + struct.pack("<I", 1)
            + struct.pack("<H", 1) + b"p"
            + struct.pack("<H", 1) + b"q"
            + struct.pack("<III", 1, 1, 1)
            + struct.pack("<IIf", 0, 0, 0.5)
        )
        assert path.read_bytes() == expected
        loaded = read_block(path)
        assert loaded.scores[0] == np.float32(0.5)

    def test_random_block_round_trips_byte_identically(self, tmp_path):
        rng = np.random.default_rng(17)
        dense = rng.random((50, 80)) * (rng.random((50, 80)) < 0.1)
        block = SimilarityBlock.from_dense("left", "right", dense)
        first, second = tmp_path / "a.lodb", tmp_path / "b.lodb"
        write_block(first, block)
        write_block(second, read_block(first))
        assert first.read_bytes() == second.read_bytes()
        np.testing.assert_array_equal(
            read_block(second).toarray(), block.toarray()
        )

    def test_unsorted_triplets_rejected_on_read(self, tmp_path):
        path = tmp_path / "b.lodb"
        payload = (
            b"LODB"
            + struct.pack("<I", 1)
            + struct.pack("<H", 1) + b"p"
            + struct.pack("<H", 1) + b"q"
            + struct.pack("<III", 2, 2, 2)
            + struct.pack("<IIf", 1, 1, 0.5)
            + struct.pack("<IIf", 0, 0, 0.5)
        )
        path.write_bytes(payload)
        with pytest.raises(FormatError, match="sorted"):
            read_block(path)

    def test_truncated_triplets(self, tmp_path):
        path = tmp_path / "b.lodb"
        block = SimilarityBlock.from_dense("p", "q", np.ones((2, 2)))
        write_block(path, block)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError, match="truncated"):
            read_block(path)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=2 ** 32 - 1))
    def test_round_trip_preserves_score_bits(self, tmp_path_factory, bits):
        """Any float32 bit pattern that is a valid nonnegative score
        survives the disk round trip bit-for-bit."""
        score = np.uint32(bits).view(np.float32)
        if not np.isfinite(score) or score <= 0:
            return
        path = tmp_path_factory.mktemp("bits") / "b.lodb"
        block = SimilarityBlock(
            image_p="p", image_q="q", shape=(1, 1),
            rows=np.array([0], dtype=np.uint32),
            cols=np.array([0], dtype=np.uint32),
            scores=np.array([score], dtype=np.float32),
        )
        write_block(path, block)
        assert read_block(path).scores[0].view(np.uint32) == np.uint32(bits)


# ---------------------------------------------------------------------------
# rank vector files

class TestRankFile:
    def test_round_trip_and_layout(self, tmp_path):
        path = tmp_path / "r.lodr"
        values = np.array([0.6, 0.8])
        ranks = RankVector(values=values, norm="L2", solver="Q")
        write_ranks(path, ranks)
        expected = (
            b"LODR"
            + struct.pack("<I", 1)
            + struct.pack("<Q", 2)
            + b"L2"
            + b"Q   "
            + values.astype("<f8").tobytes()
        )
        assert path.read_bytes() == expected
        loaded = read_ranks(path)
        assert (loaded.norm, loaded.solver) == ("L2", "Q")
        np.testing.assert_array_equal(loaded.values, values)

    def test_l1_lod_round_trip(self, tmp_path):
        path = tmp_path / "r.lodr"
        values = np.array([0.25, 0.5, 0.25])
        write_ranks(path, RankVector(values=values, norm="L1", solver="LOD"))
        loaded = read_ranks(path)
        assert (loaded.norm, loaded.solver) == ("L1", "LOD")
        np.testing.assert_array_equal(loaded.values, values)

    def test_unknown_tags_rejected(self, tmp_path):
        path = tmp_path / "r.lodr"
        write_ranks(path, RankVector(values=np.array([1.0]), norm="L2", solver="Q"))
        raw = bytearray(path.read_bytes())
        raw[16:18] = b"L7"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="norm"):
            read_ranks(path)

    def test_denormalized_payload_is_a_format_error(self, tmp_path):
        path = tmp_path / "r.lodr"
        write_ranks(path, RankVector(values=np.array([0.6, 0.8]), norm="L2", solver="Q"))
        raw = bytearray(path.read_bytes())
        raw[-8:] = struct.pack("<d", 5.0)
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_ranks(path)


# ---------------------------------------------------------------------------
# manifest

class TestManifestFile:
    def _manifest(self):
        return DatasetManifest(
            n_images=1,
            feature_dim=3,
            image_feature_dim=2,
            image_features_file="image_features.lodi",
            entries=(
                ManifestEntry(
                    image_id="a", file="a.lodf", n_proposals=2,
                    width=64.0, height=48.0,
                    ground_truth=((box(1, 1, 10, 10), "cat"),),
                ),
            ),
            class_vocabulary=("cat", "dog"),
        )

    def test_round_trip(self, tmp_path):
        path = tmp_path / "manifest.json"
        write_manifest(path, self._manifest())
        loaded = read_manifest(path)
        assert loaded == self._manifest()

    def test_unknown_top_level_key_rejected(self, tmp_path):
        path = tmp_path / "manifest.json"
        write_manifest(path, self._manifest())
        doc = path.read_text().replace('"n_images"', '"n_images_typo"')
        path.write_text(doc)
        with pytest.raises(FormatError):
            read_manifest(path)

    def test_unknown_image_key_rejected(self, tmp_path):
        import json

        path = tmp_path / "manifest.json"
        write_manifest(path, self._manifest())
        doc = json.loads(path.read_text())
        doc["images"][0]["extra"] = 1
        path.write_text(json.dumps(doc))
        with pytest.raises(FormatError, match="unknown"):
            read_manifest(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{not json")
        with pytest.raises(FormatError, match="JSON"):
            read_manifest(path)

    def test_degenerate_ground_truth_box(self, tmp_path):
        path = tmp_path / "manifest.json"
        write_manifest(path, self._manifest())
        path.write_text(path.read_text().replace("10.0,\n", "1.0,\n", 2))
        with pytest.raises(FormatError):
            read_manifest(path)


# ---------------------------------------------------------------------------
# discovery results

class TestResultFile:
    def test_round_trip(self, tmp_path):
        record = make_record("a", np.array([[1.0, 0.0], [0.0, 1.0]]), groups=[1, 2])
        result = select_all([record], np.array([0.9, 0.4]),
                            SelectionConfig(max_per_image=2))
        path = tmp_path / "result.json"
        write_result(path, result)
        loaded = read_result(path)
        assert loaded == result

    def test_unknown_key_rejected(self, tmp_path):
        import json

        record = make_record("a", np.array([[1.0, 0.0]]))
        path = tmp_path / "result.json"
        write_result(path, select_all([record], np.array([1.0])))
        doc = json.loads(path.read_text())
        doc["bogus"] = True
        path.write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            read_result(path)

    def test_contract_violations_surface_as_format_errors(self, tmp_path):
        import json

        record = make_record("a", np.array([[1.0, 0.0], [0.0, 1.0]]))
        path = tmp_path / "result.json"
        write_result(path, select_all([record], np.array([0.9, 0.4]),
                                      SelectionConfig(max_per_image=2)))
        doc = json.loads(path.read_text())
        doc["images"][0]["regions"][0]["score"] = 0.1  # breaks ordering
        path.write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            read_result(path)


# ---------------------------------------------------------------------------
# whole datasets

class TestDataset:
    def _write(self, tmp_path, n=3):
        rng = np.random.default_rng(5)
        records = [
            make_record(f"img_{i}", rng.random((2, 4)).astype(np.float32),
                        image_feature=rng.random(3))
            for i in range(n)
        ]
        return records, write_dataset(tmp_path / "data", records)

    def test_load_and_read_back(self, tmp_path):
        records, manifest_path = self._write(tmp_path)
        dataset = load_dataset(manifest_path)
        assert isinstance(dataset, Dataset)
        assert len(dataset) == 3
        assert dataset.image_ids == [r.image_id for r in records]
        got = dataset.record("img_1")
        np.testing.assert_array_equal(
            got.proposal_features(), records[1].proposal_features()
        )
        np.testing.assert_array_equal(got.image_feature, records[1].image_feature)

    def test_unknown_id(self, tmp_path):
        _, manifest_path = self._write(tmp_path)
        with pytest.raises(DataValidationError, match="unknown"):
            load_dataset(manifest_path).record("nope")

    def test_missing_feature_file_names_the_image(self, tmp_path):
        _, manifest_path = self._write(tmp_path)
        dataset = load_dataset(manifest_path)
        (manifest_path.parent / dataset.manifest.entries[1].file).unlink()
        with pytest.raises(MissingInputError, match="img_1"):
            dataset.record("img_1")

    def test_validation_reports_missing_file_without_stopping(self, tmp_path):
        _, manifest_path = self._write(tmp_path)
        dataset = load_dataset(manifest_path)
        (manifest_path.parent / dataset.manifest.entries[0].file).unlink()
        report = validate_dataset(dataset.manifest, dataset.validation_stream())
        assert [(v.image_id, v.kind) for v in report.violations] == [
            ("img_0", "missing-record")
        ]

    def test_validation_reports_corrupt_file_without_stopping(self, tmp_path):
        _, manifest_path = self._write(tmp_path)
        dataset = load_dataset(manifest_path)
        victim = manifest_path.parent / dataset.manifest.entries[1].file
        victim.write_bytes(victim.read_bytes()[:-5])
        report = validate_dataset(dataset.manifest, dataset.validation_stream())
        kinds = sorted(v.kind for v in report.violations)
        assert kinds == ["format", "missing-record"]

    def test_clean_dataset_validates(self, tmp_path):
        _, manifest_path = self._write(tmp_path)
        dataset = load_dataset(manifest_path)
        assert validate_dataset(dataset.manifest, dataset.validation_stream()).ok

    def test_large_manifest_streams_with_bounded_memory(self, tmp_path):
        """Iterating 10K records must not materialize the whole dataset."""
        n, d = 10_000, 256
        feature = np.ones(d, dtype=np.float32)
        root = tmp_path / "data"
        root.mkdir()
        entries = []
        payload = None
        for i in range(n):
            name = f"img_{i:05d}.lodf"
            if payload is None:
                write_proposals(root / name, [_proposal(feature)])
                payload = (root / name).read_bytes()
            else:
                (root / name).write_bytes(payload)
            entries.append(
                ManifestEntry(image_id=f"img_{i:05d}", file=name, n_proposals=1,
                              width=100.0, height=100.0)
            )
        write_image_features(root / "image_features.lodi",
                             np.ones((n, 4), dtype=np.float32))
        write_manifest(
            root / "manifest.json",
            DatasetManifest(
                n_images=n, feature_dim=d, image_feature_dim=4,
                image_features_file="image_features.lodi", entries=tuple(entries),
            ),
        )

        dataset = load_dataset(root / "manifest.json")
        tracemalloc.start()
        seen = 0
        for record in dataset:
            seen += record.n_proposals
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        assert seen == n
        materialized_floor = n * d * 4  # all features at once, ignoring overhead
        assert peak < materialized_floor / 2
