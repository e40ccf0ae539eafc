"""Geometry primitives, node indexing, and dataset validation."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from regionrank import (
    BoundingBox,
    DatasetManifest,
    FormatError,
    GeometryError,
    ImageRecord,
    ManifestEntry,
    NodeIndex,
    iou,
    validate_dataset,
)

from conftest import box, make_record


# ---------------------------------------------------------------------------
# bounding boxes and IoU

class TestBoundingBox:
    def test_accessors(self):
        b = box(2.0, 3.0, 10.0, 15.0)
        assert b.width == 8.0
        assert b.height == 12.0
        assert b.area == 96.0
        assert b.center == (6.0, 9.0)

    def test_array_round_trip(self):
        b = box(1.5, 2.5, 3.5, 4.5)
        assert BoundingBox.from_array(b.as_array()) == b

    @pytest.mark.parametrize(
        "corners",
        [(0, 0, 0, 10), (0, 0, 10, 0), (5, 5, 5, 5), (10, 0, 0, 10)],
    )
    def test_degenerate_rejected(self, corners):
        with pytest.raises(GeometryError):
            BoundingBox(*corners)


class TestIou:
    def test_identical_boxes(self):
        assert iou(box(0, 0, 10, 10), box(0, 0, 10, 10)) == 1.0

    def test_disjoint_boxes(self):
        assert iou(box(0, 0, 10, 10), box(20, 20, 30, 30)) == 0.0

    def test_partial_overlap(self):
        # intersection 5x5 = 25, union 100 + 100 - 25 = 175
        assert iou(box(0, 0, 10, 10), box(5, 5, 15, 15)) == pytest.approx(25 / 175)

    def test_touching_edges_count_as_disjoint(self):
        assert iou(box(0, 0, 10, 10), box(10, 0, 20, 10)) == 0.0

    def test_containment(self):
        assert iou(box(0, 0, 10, 10), box(2, 2, 6, 6)) == pytest.approx(16 / 100)


_coord = st.floats(min_value=-500, max_value=500, allow_nan=False, width=32)
_extent = st.floats(min_value=0.125, max_value=400, allow_nan=False, width=32)


@st.composite
def random_boxes(draw):
    x0, y0 = draw(_coord), draw(_coord)
    return BoundingBox(x0, y0, x0 + draw(_extent), y0 + draw(_extent))


@given(random_boxes(), random_boxes())
def test_iou_symmetric(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


@given(random_boxes())
def test_iou_self_is_one(a):
    assert iou(a, a) == 1.0


@given(random_boxes(), random_boxes(), st.floats(min_value=0.01, max_value=100))
def test_iou_scale_invariant(a, b, s):
    scaled_a = BoundingBox(*(s * a.as_array()))
    scaled_b = BoundingBox(*(s * b.as_array()))
    assert iou(scaled_a, scaled_b) == pytest.approx(iou(a, b), abs=1e-12)


# ---------------------------------------------------------------------------
# node indexing

class TestNodeIndex:
    def test_counts_and_offsets(self):
        index = NodeIndex([3, 1, 4])
        assert index.n_images == 3
        assert index.n_nodes == 8
        assert [index.count(p) for p in range(3)] == [3, 1, 4]
        assert [index.offset(p) for p in range(3)] == [0, 3, 4]
        assert index.image_slice(2) == slice(4, 8)

    def test_round_trip_bijection(self):
        index = NodeIndex([2, 0, 5, 1])
        for node in range(index.n_nodes):
            image, local = index.from_global(node)
            assert index.to_global(image, local) == node

    def test_out_of_range(self):
        index = NodeIndex([2, 2])
        with pytest.raises(IndexError):
            index.from_global(4)
        with pytest.raises(IndexError):
            index.from_global(-1)
        with pytest.raises(IndexError):
            index.to_global(0, 2)

    def test_from_records(self):
        records = [
            make_record("a", np.ones((2, 3))),
            make_record("b", np.ones((4, 3))),
        ]
        index = NodeIndex.from_records(records)
        assert index.n_nodes == 6
        assert index.count(1) == 4


# ---------------------------------------------------------------------------
# dataset validation

def _manifest_for(records, feature_dim=3, image_feature_dim=3):
    return DatasetManifest(
        n_images=len(records),
        feature_dim=feature_dim,
        image_feature_dim=image_feature_dim,
        image_features_file="image_features.lodi",
        entries=tuple(
            ManifestEntry(
                image_id=r.image_id,
                file=f"{r.image_id}.lodf",
                n_proposals=r.n_proposals,
                width=r.width,
                height=r.height,
                ground_truth=r.ground_truth,
            )
            for r in records
        ),
    )


class TestValidateDataset:
    def test_well_formed_dataset_is_clean(self):
        records = [
            make_record("a", np.ones((2, 3)), image_feature=np.ones(3)),
            make_record("b", np.ones((1, 3)), image_feature=np.ones(3)),
        ]
        report = validate_dataset(_manifest_for(records), records)
        assert report.ok
        assert str(report) == "dataset valid (0 violations)"

    def test_feature_dimension_mismatch_names_the_image(self):
        records = [
            make_record("a", np.ones((1, 3)), image_feature=np.ones(3)),
            make_record("b", np.ones((1, 5)), image_feature=np.ones(3)),
        ]
        report = validate_dataset(_manifest_for(records), records)
        assert not report.ok
        assert [v.image_id for v in report.violations] == ["b"]
        assert report.violations[0].kind == "dimension-mismatch"

    def test_out_of_bounds_box(self):
        records = [
            make_record(
                "a", np.ones((1, 3)), boxes=[(0.0, 0.0, 120.0, 10.0)],
                image_feature=np.ones(3),
            )
        ]
        report = validate_dataset(_manifest_for(records), records)
        kinds = [v.kind for v in report.violations]
        assert kinds == ["out-of-bounds"]

    def test_count_mismatch(self):
        records = [make_record("a", np.ones((2, 3)), image_feature=np.ones(3))]
        manifest = _manifest_for(records)
        entry = manifest.entries[0]
        bad = DatasetManifest(
            n_images=1,
            feature_dim=3,
            image_feature_dim=3,
            image_features_file=manifest.image_features_file,
            entries=(
                ManifestEntry(
                    image_id=entry.image_id,
                    file=entry.file,
                    n_proposals=5,
                    width=entry.width,
                    height=entry.height,
                ),
            ),
        )
        report = validate_dataset(bad, records)
        assert [v.kind for v in report.violations] == ["count-mismatch"]

    def test_duplicate_and_unknown_ids(self):
        a = make_record("a", np.ones((1, 3)), image_feature=np.ones(3))
        stray = make_record("ghost", np.ones((1, 3)), image_feature=np.ones(3))
        report = validate_dataset(_manifest_for([a]), [a, a, stray])
        kinds = sorted(v.kind for v in report.violations)
        assert kinds == ["duplicate-id", "unknown-id"]

    def test_missing_record(self):
        a = make_record("a", np.ones((1, 3)), image_feature=np.ones(3))
        b = make_record("b", np.ones((1, 3)), image_feature=np.ones(3))
        report = validate_dataset(_manifest_for([a, b]), [a])
        assert [(v.image_id, v.kind) for v in report.violations] == [("b", "missing-record")]

    def test_unreadable_record_reported_and_stream_continues(self):
        a = make_record("a", np.ones((1, 3)), image_feature=np.ones(3))
        b = make_record("b", np.ones((1, 3)), image_feature=np.ones(3))

        class Stream:
            """Yields a, raises once in the middle, then yields b."""

            def __init__(self):
                self._steps = iter(
                    [a, FormatError("payload is garbled"), b]
                )

            def __iter__(self):
                return self

            def __next__(self):
                step = next(self._steps)
                if isinstance(step, FormatError):
                    raise step
                return step

        report = validate_dataset(_manifest_for([a, b]), Stream())
        assert [v.kind for v in report.violations] == ["format"]
        assert "garbled" in report.violations[0].message


class TestManifest:
    def test_duplicate_ids_rejected(self):
        entry = ManifestEntry(image_id="a", file="a.lodf", n_proposals=1,
                              width=10, height=10)
        with pytest.raises(Exception):
            DatasetManifest(
                n_images=2, feature_dim=3, image_feature_dim=3,
                image_features_file="f.lodi", entries=(entry, entry),
            )

    def test_count_must_match_entries(self):
        entry = ManifestEntry(image_id="a", file="a.lodf", n_proposals=1,
                              width=10, height=10)
        with pytest.raises(Exception):
            DatasetManifest(
                n_images=3, feature_dim=3, image_feature_dim=3,
                image_features_file="f.lodi", entries=(entry,),
            )

    def test_image_ids_in_order(self):
        records = [
            make_record("z", np.ones((1, 3)), image_feature=np.ones(3)),
            make_record("a", np.ones((1, 3)), image_feature=np.ones(3)),
        ]
        assert _manifest_for(records).image_ids == ["z", "a"]


def test_image_record_accessors():
    feats = np.arange(6, dtype=np.float32).reshape(2, 3)
    record = make_record("a", feats)
    assert record.n_proposals == 2
    np.testing.assert_array_equal(record.proposal_features(), feats)
    assert record.proposal_boxes().shape == (2, 4)
