"""Localization and retrieval metrics against naive brute-force re-derivations."""

import numpy as np
import pytest

from regionrank import (
    DataValidationError,
    NeighborList,
    SIGMA_GRID,
    SelectionConfig,
    ap_range,
    average_precision,
    compute_report,
    corloc,
    corret,
    det_rate,
    iou,
    pr_curve,
    precision_recall_at,
    select_all,
)

from conftest import box, make_record


# ---------------------------------------------------------------------------
# brute-force re-derivations (naive loops, no early exits)

def bf_match(pred_boxes, gt_boxes, sigma):
    taken = [False] * len(gt_boxes)
    matched = 0
    for pred in pred_boxes:
        overlaps = [
            (-1.0 if taken[g] else iou(pred, gt)) for g, gt in enumerate(gt_boxes)
        ]
        if not overlaps:
            continue
        best = max(range(len(overlaps)), key=lambda g: overlaps[g])
        if overlaps[best] >= sigma:
            taken[best] = True
            matched += 1
    return matched


def bf_corloc(result, records, sigma=0.5):
    by_image = result.by_image()
    n = correct = 0
    for record in records:
        gt = [b for b, _ in record.ground_truth]
        if not gt:
            continue
        n += 1
        sel = by_image.get(record.image_id)
        if sel is not None and sel.regions:
            if any(iou(sel.regions[0].box, g) >= sigma for g in gt):
                correct += 1
    return 100.0 * correct / n


def bf_precision_recall(result, records, sigma, m):
    by_image = result.by_image()
    n_pred = n_gt = n_matched = 0
    for record in records:
        gt = [b for b, _ in record.ground_truth]
        n_gt += len(gt)
        sel = by_image.get(record.image_id)
        preds = [r.box for r in sel.regions[:m]] if sel is not None else []
        n_pred += len(preds)
        n_matched += bf_match(preds, gt, sigma)
    precision = n_matched / n_pred if n_pred else 0.0
    recall = n_matched / n_gt if n_gt else 0.0
    return precision, recall


def bf_average_precision(result, records, sigma, m_max):
    points = [bf_precision_recall(result, records, sigma, m) for m in range(1, m_max + 1)]
    area = points[0][0] * points[0][1]
    for (p0, r0), (p1, r1) in zip(points, points[1:]):
        area += (r1 - r0) * (p0 + p1) / 2.0
    return area


def bf_corret(neighbors, class_labels, k):
    total = 0.0
    for p, retrieved in enumerate(neighbors.neighbors):
        if not class_labels[p]:
            continue
        hits = 0
        for q in list(retrieved)[:k]:
            if set(class_labels[int(q)]) & set(class_labels[p]):
                hits += 1
        total += hits / k
    return 100.0 * total / len(neighbors.neighbors)


def random_micro_dataset(rng, with_unannotated=False):
    """Up to 20 images with crowded boxes, ground truth, and selections."""
    n = int(rng.integers(2, 21))
    records = []
    scores = []
    for i in range(n):
        r = int(rng.integers(1, 6))
        corners = rng.uniform(0, 60, size=(r, 2))
        sizes = rng.uniform(5, 40, size=(r, 2))
        boxes = [
            (x, y, min(x + w, 100.0), min(y + h, 100.0))
            for (x, y), (w, h) in zip(corners, sizes)
        ]
        annotated = not with_unannotated or i == 0 or rng.random() < 0.7
        n_gt = int(rng.integers(1, 4)) if annotated else 0
        gt = []
        for _ in range(n_gt):
            x, y = rng.uniform(0, 60, size=2)
            w, h = rng.uniform(5, 40, size=2)
            gt.append((box(x, y, min(x + w, 100.0), min(y + h, 100.0)), "obj"))
        records.append(
            make_record(f"img_{i:02d}", rng.random((r, 3)), boxes=boxes,
                        ground_truth=tuple(gt))
        )
        scores.append(rng.random(r))
    result = select_all(records, np.concatenate(scores), SelectionConfig(max_per_image=4))
    return result, records


# ---------------------------------------------------------------------------
# localization

class TestCorloc:
    def test_exact_hit_scores_hundred(self):
        gt = ((box(2, 2, 10, 10), "obj"),)
        records = [make_record("a", np.ones((1, 2)), ground_truth=gt)]
        result = select_all(records, np.array([1.0]))
        assert corloc(result, records) == 100.0

    def test_boundary_overlap_counts(self):
        """IoU exactly at sigma is correct -- the comparison is inclusive."""
        records = [
            make_record("a", np.ones((1, 2)), boxes=[(0, 0, 10, 10)],
                        ground_truth=((box(0, 4, 10, 10), "obj"),))
        ]
        result = select_all(records, np.array([1.0]))
        top = result.by_image()["a"].top()
        assert iou(top.box, box(0, 4, 10, 10)) == 0.6
        assert corloc(result, records, sigma=0.6) == 100.0
        assert corloc(result, records, sigma=0.6000001) == 0.0

    def test_half_split(self):
        records = [
            make_record("a", np.ones((1, 2)), boxes=[(2, 2, 10, 10)],
                        ground_truth=((box(2, 2, 10, 10), "obj"),)),
            make_record("b", np.ones((1, 2)), boxes=[(2, 2, 10, 10)],
                        ground_truth=((box(50, 50, 60, 60), "obj"),)),
        ]
        result = select_all(records, np.array([1.0, 1.0]))
        assert corloc(result, records) == 50.0

    def test_images_without_gt_are_excluded(self):
        records = [
            make_record("a", np.ones((1, 2)), boxes=[(2, 2, 10, 10)],
                        ground_truth=((box(2, 2, 10, 10), "obj"),)),
            make_record("no-gt", np.ones((1, 2))),
        ]
        result = select_all(records, np.array([1.0, 1.0]))
        assert corloc(result, records) == 100.0

    def test_no_gt_anywhere_is_an_error(self):
        records = [make_record("a", np.ones((1, 2)))]
        result = select_all(records, np.array([1.0]))
        with pytest.raises(DataValidationError):
            corloc(result, records)

    def test_stray_prediction_is_an_error(self):
        gt = ((box(2, 2, 10, 10), "obj"),)
        records = [make_record("a", np.ones((1, 2)), ground_truth=gt)]
        result = select_all(records, np.array([1.0]))
        renamed = [make_record("other", np.ones((1, 2)), ground_truth=gt)]
        with pytest.raises(DataValidationError):
            corloc(result, renamed)


class TestAveragePrecision:
    def test_perfect_predictor(self):
        gt = ((box(2, 2, 10, 10), "obj"),)
        records = [make_record(f"i{k}", np.ones((1, 2)), ground_truth=gt)
                   for k in range(3)]
        result = select_all(records, np.ones(3))
        assert average_precision(result, records, sigma=0.5) == 1.0
        assert ap_range(result, records) == 1.0

    def test_no_overlap_gives_zero(self):
        records = [make_record("a", np.ones((1, 2)), boxes=[(2, 2, 10, 10)],
                               ground_truth=((box(50, 50, 90, 90), "obj"),))]
        result = select_all(records, np.array([1.0]))
        assert average_precision(result, records) == 0.0
        assert ap_range(result, records) == 0.0

    def test_constant_overlap_thresholds_count(self):
        """Predictions with IoU 0.6 against every box: full credit at the
        three overlap levels up to 0.60, none above, mean 3/10."""
        records = [
            make_record("a", np.ones((1, 2)), boxes=[(0, 0, 10, 10)],
                        ground_truth=((box(0, 4, 10, 10), "obj"),))
        ]
        result = select_all(records, np.array([1.0]))
        assert ap_range(result, records) == pytest.approx(0.3)

    def test_mixed_hits_trapezoid(self):
        """Two-image case: (precision, recall) walks (1/2, 1/2) -> (1/2, 1)
        so the anchored polyline area is 0.25 + 0.25."""
        records = [
            make_record("a", np.ones((2, 2)),
                        boxes=[(0, 0, 10, 10), (80, 80, 90, 90)],
                        ground_truth=((box(0, 0, 10, 10), "obj"),)),
            make_record("b", np.ones((2, 2)),
                        boxes=[(0, 0, 10, 10), (50, 50, 60, 60)],
                        ground_truth=((box(50, 50, 60, 60), "obj"),)),
        ]
        result = select_all(
            records, np.array([0.9, 0.8, 0.9, 0.8]), SelectionConfig(max_per_image=2)
        )
        p1, r1 = precision_recall_at(result, records, 0.5, 1)
        p2, r2 = precision_recall_at(result, records, 0.5, 2)
        assert (p1, r1) == (0.5, 0.5)
        assert (p2, r2) == (0.5, 1.0)
        assert average_precision(result, records) == pytest.approx(0.5)

    def test_monotone_in_sigma(self):
        rng = np.random.default_rng(60)
        result, records = random_micro_dataset(rng)
        values = [average_precision(result, records, s) for s in SIGMA_GRID]
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))

    def test_matches_brute_force_on_micro_datasets(self):
        rng = np.random.default_rng(61)
        for trial in range(50):
            result, records = random_micro_dataset(rng, with_unannotated=(trial % 3 == 0))
            m = result.config.max_per_image
            for sigma in (0.5, 0.75):
                assert average_precision(result, records, sigma, m) == pytest.approx(
                    bf_average_precision(result, records, sigma, m), abs=1e-9
                ), f"trial {trial} sigma {sigma}"
            assert corloc(result, records) == pytest.approx(
                bf_corloc(result, records), abs=1e-9
            ), f"trial {trial}"
            for m_at in (1, 3):
                _, recall = bf_precision_recall(result, records, 0.5, m_at)
                assert det_rate(result, records, m_at) == pytest.approx(
                    100.0 * recall, abs=1e-9
                ), f"trial {trial} m {m_at}"

    def test_permuting_images_changes_nothing(self):
        rng = np.random.default_rng(62)
        result, records = random_micro_dataset(rng)
        shuffled = list(records)
        rng.shuffle(shuffled)
        assert corloc(result, records) == corloc(result, shuffled)
        assert average_precision(result, records) == pytest.approx(
            average_precision(result, shuffled), abs=1e-12
        )
        assert det_rate(result, records, 2) == det_rate(result, shuffled, 2)

    def test_corloc_equals_precision_at_one_prediction(self):
        rng = np.random.default_rng(63)
        records, scores = [], []
        for i in range(12):
            x, y = rng.uniform(0, 60, size=2)
            gt_box = box(x, y, x + 20, y + 20)
            records.append(
                make_record(f"i{i}", np.ones((1, 2)),
                            boxes=[(rng.uniform(0, 60), rng.uniform(0, 60),
                                    rng.uniform(61, 100), rng.uniform(61, 100))],
                            ground_truth=((gt_box, "obj"),))
            )
            scores.append(1.0)
        result = select_all(records, np.array(scores), SelectionConfig(max_per_image=1))
        precision, _ = precision_recall_at(result, records, 0.5, 1)
        assert corloc(result, records) == 100.0 * precision


class TestDetRate:
    def test_perfect_predictor_reaches_hundred(self):
        gt = ((box(2, 2, 10, 10), "obj"),)
        records = [make_record("a", np.ones((1, 2)), ground_truth=gt)]
        result = select_all(records, np.array([1.0]))
        assert det_rate(result, records, m=1) == 100.0

    def test_m_one_matches_first_pr_point(self):
        rng = np.random.default_rng(64)
        result, records = random_micro_dataset(rng)
        _, recall = precision_recall_at(result, records, 0.5, 1)
        assert det_rate(result, records, 1) == 100.0 * recall

    def test_invalid_m(self):
        records = [make_record("a", np.ones((1, 2)),
                               ground_truth=((box(2, 2, 10, 10), "obj"),))]
        result = select_all(records, np.array([1.0]))
        with pytest.raises(DataValidationError):
            det_rate(result, records, 0)


# ---------------------------------------------------------------------------
# retrieval

class TestCorret:
    def test_complete_label_graph(self):
        neighbors = NeighborList(
            neighbors=(np.array([1, 2]), np.array([0, 2]), np.array([0, 1])), k=2
        )
        labels = [{"cat"}, {"cat"}, {"cat"}]
        assert corret(neighbors, labels) == 100.0

    def test_disjoint_labels(self):
        neighbors = NeighborList(
            neighbors=(np.array([1]), np.array([0])), k=1
        )
        assert corret(neighbors, [{"cat"}, {"dog"}]) == 0.0

    def test_five_image_hand_count(self):
        # classes: 0,1 cat; 2,3 dog; 4 unlabeled
        neighbors = NeighborList(
            neighbors=(
                np.array([1, 2]),   # cat, dog  -> 1/2
                np.array([2, 3]),   # dog, dog  -> 0
                np.array([3, 0]),   # dog, cat  -> 1/2
                np.array([2, 4]),   # dog, none -> 1/2
                np.array([0, 1]),   # unlabeled query -> 0
            ),
            k=2,
        )
        labels = [{"cat"}, {"cat"}, {"dog"}, {"dog"}, set()]
        assert corret(neighbors, labels) == pytest.approx(100.0 * (3 / 2) / 5)

    def test_multi_label_overlap_counts(self):
        neighbors = NeighborList(neighbors=(np.array([1]), np.array([0])), k=1)
        labels = [{"cat", "dog"}, {"dog", "fox"}]
        assert corret(neighbors, labels) == 100.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(65)
        vocab = ["a", "b", "c"]
        for _ in range(20):
            n = int(rng.integers(3, 15))
            k = int(rng.integers(1, n))
            ids = []
            for p in range(n):
                others = np.array([q for q in range(n) if q != p])
                ids.append(rng.choice(others, size=k, replace=False))
            neighbors = NeighborList(neighbors=tuple(ids), k=k)
            labels = [
                set(rng.choice(vocab, size=rng.integers(0, 3), replace=False))
                for _ in range(n)
            ]
            assert corret(neighbors, labels) == pytest.approx(
                bf_corret(neighbors, labels, k), abs=1e-9
            )

    def test_k_override_truncates(self):
        neighbors = NeighborList(
            neighbors=(np.array([1, 2]), np.array([0, 2]), np.array([1, 0])), k=2
        )
        labels = [{"x"}, {"x"}, {"y"}]
        assert corret(neighbors, labels, k=1) == pytest.approx(100.0 * (1 + 1 + 0) / 3)

    def test_label_count_mismatch(self):
        neighbors = NeighborList(neighbors=(np.array([1]), np.array([0])), k=1)
        with pytest.raises(DataValidationError):
            corret(neighbors, [{"a"}])


# ---------------------------------------------------------------------------
# grids and reports

def test_sigma_grid_values():
    assert SIGMA_GRID == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


class TestReport:
    def test_fields_cover_all_metrics(self):
        rng = np.random.default_rng(66)
        result, records = random_micro_dataset(rng)
        report = compute_report(result, records, detrate_at=(1, 3), per_class=True)
        assert report.corloc == pytest.approx(corloc(result, records))
        assert report.ap50 == pytest.approx(average_precision(result, records, 0.5))
        assert report.ap_range_mean == pytest.approx(ap_range(result, records))
        assert [m for m, _ in report.detrate] == [1, 3]
        assert report.n_images == sum(1 for r in records if r.ground_truth)
        assert report.per_class and report.per_class[0][0] == "obj"
        assert 0 <= report.corloc <= 100
        assert 0.0 <= report.ap50 <= 1.0

    def test_text_and_csv_shapes(self):
        rng = np.random.default_rng(67)
        result, records = random_micro_dataset(rng)
        report = compute_report(result, records)
        lines = report.lines()
        assert any(line.startswith("corloc:") for line in lines)
        header, row = report.csv_header(), report.csv_row()
        assert len(header.split(",")) == len(row.split(","))
        assert "ap_50" in header

    def test_pr_curve_rows(self):
        rng = np.random.default_rng(68)
        result, records = random_micro_dataset(rng)
        rows = pr_curve(result, records, sigma=0.5)
        assert [m for m, _, _ in rows] == list(range(1, result.config.max_per_image + 1))
        for m, p, r in rows:
            expected = precision_recall_at(result, records, 0.5, m)
            assert (p, r) == expected
