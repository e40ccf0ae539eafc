"""Evaluation metrics for discovered regions against ground-truth boxes.

Matching is detection-style: within an image, predictions are visited in
rank order and each one claims the not-yet-claimed ground-truth box of
highest overlap, provided that overlap reaches ``sigma`` (boundary
inclusive).  Images without ground truth never enter localization or recall
denominators, but their predictions still dilute precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataValidationError
from .graph import NeighborList
from .model import BoundingBox, ImageRecord, iou
from .selection import DiscoveryResult

SIGMA_GRID = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


def _gt_boxes(records: Sequence[ImageRecord]) -> dict[str, list[BoundingBox]]:
    return {r.image_id: [box for box, _ in r.ground_truth] for r in records}


def _check_alignment(result: DiscoveryResult, gt: Mapping[str, list[BoundingBox]]) -> None:
    unknown = [i for i in result.image_ids if i not in gt]
    if unknown:
        raise DataValidationError(f"predictions for images outside the dataset: {unknown[:3]}")
    if not any(gt.values()):
        raise DataValidationError("no ground-truth boxes anywhere; metrics are undefined")


def _match_image(
    predictions: Sequence[BoundingBox], truths: Sequence[BoundingBox], sigma: float
) -> int:
    """Greedy one-to-one matching by prediction rank; returns matched count."""
    taken = [False] * len(truths)
    matched = 0
    for pred in predictions:
        best, best_iou = -1, -1.0
        for g, truth in enumerate(truths):
            if taken[g]:
                continue
            overlap = iou(pred, truth)
            if overlap > best_iou:
                best, best_iou = g, overlap
        if best >= 0 and best_iou >= sigma:
            taken[best] = True
            matched += 1
    return matched


def corloc(result: DiscoveryResult, records: Sequence[ImageRecord], sigma: float = 0.5) -> float:
    """Percentage of annotated images whose top prediction hits some
    ground-truth box with IoU >= sigma.  Images lacking a prediction count
    as misses."""
    gt = _gt_boxes(records)
    _check_alignment(result, gt)
    by_image = result.by_image()
    n, correct = 0, 0
    for record in records:
        truths = gt[record.image_id]
        if not truths:
            continue
        n += 1
        sel = by_image.get(record.image_id)
        top = sel.top() if sel is not None else None
        if top is not None and any(iou(top.box, t) >= sigma for t in truths):
            correct += 1
    if n == 0:
        raise DataValidationError("no annotated images to localize")
    return 100.0 * correct / n


def precision_recall_at(
    result: DiscoveryResult,
    records: Sequence[ImageRecord],
    sigma: float,
    m: int,
) -> tuple[float, float]:
    """Dataset precision and recall using each image's top-m predictions.

    Precision with zero predictions overall is reported as 0.0.
    """
    if m < 1:
        raise DataValidationError(f"m must be positive, got {m}")
    gt = _gt_boxes(records)
    _check_alignment(result, gt)
    by_image = result.by_image()
    n_pred = n_gt = n_matched = 0
    for record in records:
        truths = gt[record.image_id]
        n_gt += len(truths)
        sel = by_image.get(record.image_id)
        boxes = [r.box for r in sel.regions[:m]] if sel is not None else []
        n_pred += len(boxes)
        if truths and boxes:
            n_matched += _match_image(boxes, truths, sigma)
    precision = n_matched / n_pred if n_pred else 0.0
    recall = n_matched / n_gt if n_gt else 0.0
    return precision, recall


def average_precision(
    result: DiscoveryResult,
    records: Sequence[ImageRecord],
    sigma: float = 0.5,
    max_regions: int | None = None,
) -> float:
    """Area under the precision-recall polyline traced by m = 1..M.

    The first point anchors the curve: the segment from recall 0 to the
    m=1 recall uses the m=1 precision.  Later segments are trapezoids.
    """
    m_max = max_regions if max_regions is not None else result.config.max_per_image
    if m_max < 1:
        raise DataValidationError(f"max_regions must be positive, got {m_max}")
    points = [precision_recall_at(result, records, sigma, m) for m in range(1, m_max + 1)]
    area = points[0][1] * points[0][0]
    for (p_prev, r_prev), (p_cur, r_cur) in zip(points, points[1:]):
        area += (r_cur - r_prev) * (p_cur + p_prev) / 2.0
    return area


def ap_range(
    result: DiscoveryResult,
    records: Sequence[ImageRecord],
    max_regions: int | None = None,
) -> float:
    """Mean average precision over the overlap grid 0.50, 0.55, ..., 0.95."""
    values = [average_precision(result, records, sigma, max_regions) for sigma in SIGMA_GRID]
    return float(np.mean(values))


def det_rate(
    result: DiscoveryResult,
    records: Sequence[ImageRecord],
    m: int,
    sigma: float = 0.5,
) -> float:
    """Ground-truth recall (percent) using each image's top-m predictions."""
    _, recall = precision_recall_at(result, records, sigma, m)
    return 100.0 * recall


def corret(
    neighbors: NeighborList,
    class_labels: Sequence[frozenset[str] | set[str]],
    k: int | None = None,
) -> float:
    """Mean percentage of retrieved neighbors that share a ground-truth
    class with the query image.  Images with no true neighbor contribute 0.
    """
    if len(class_labels) != neighbors.n_images:
        raise DataValidationError("need one class set per image")
    k_eff = neighbors.k if k is None else k
    if k_eff < 1:
        raise DataValidationError(f"k must be positive, got {k_eff}")
    total = 0.0
    for p, retrieved in enumerate(neighbors.neighbors):
        labels = class_labels[p]
        if not labels:
            continue
        hits = sum(1 for q in retrieved[:k_eff] if class_labels[int(q)] & labels)
        total += hits / k_eff
    return 100.0 * total / neighbors.n_images


@dataclass(frozen=True)
class MetricReport:
    """All headline numbers for one discovery run.

    Units: ``corloc`` and ``detrate`` values are percentages in [0, 100];
    ``ap_by_sigma``, ``ap50``, and ``ap_range_mean`` are fractions in [0, 1].
    """

    corloc: float
    ap_by_sigma: tuple[tuple[float, float], ...]
    ap50: float
    ap_range_mean: float
    detrate: tuple[tuple[int, float], ...]
    n_images: int
    max_regions: int
    per_class: tuple[tuple[str, float], ...] = field(default_factory=tuple)

    def lines(self) -> list[str]:
        out = [
            f"images evaluated: {self.n_images}",
            f"corloc: {self.corloc:.2f}",
            f"ap50: {self.ap50:.4f}",
            f"ap[50:95]: {self.ap_range_mean:.4f}",
        ]
        for sigma, value in self.ap_by_sigma:
            out.append(f"ap@{sigma:.2f}: {value:.4f}")
        for m, value in self.detrate:
            out.append(f"detrate@m={m}: {value:.2f}")
        for name, value in self.per_class:
            out.append(f"corloc[{name}]: {value:.2f}")
        return out

    def csv_header(self) -> str:
        cols = ["n_images", "corloc", "ap50", "ap_range"]
        cols += [f"ap_{int(round(100 * s))}" for s, _ in self.ap_by_sigma]
        cols += [f"detrate_m{m}" for m, _ in self.detrate]
        return ",".join(cols)

    def csv_row(self) -> str:
        vals = [str(self.n_images), f"{self.corloc:.6f}", f"{self.ap50:.6f}",
                f"{self.ap_range_mean:.6f}"]
        vals += [f"{v:.6f}" for _, v in self.ap_by_sigma]
        vals += [f"{v:.6f}" for _, v in self.detrate]
        return ",".join(vals)


def compute_report(
    result: DiscoveryResult,
    records: Sequence[ImageRecord],
    max_regions: int | None = None,
    detrate_at: Sequence[int] = (1, 5),
    per_class: bool = False,
) -> MetricReport:
    """Evaluate every headline metric in one pass over the dataset."""
    m_max = max_regions if max_regions is not None else result.config.max_per_image
    ap_by_sigma = tuple(
        (sigma, average_precision(result, records, sigma, m_max)) for sigma in SIGMA_GRID
    )
    ap50 = ap_by_sigma[0][1]
    range_mean = float(np.mean([v for _, v in ap_by_sigma]))
    rates = tuple((m, det_rate(result, records, m)) for m in detrate_at)
    classes: tuple[tuple[str, float], ...] = ()
    if per_class:
        classes = tuple(
            (name, _per_class_corloc(result, records, name))
            for name in sorted({label for r in records for _, label in r.ground_truth})
        )
    n_annotated = sum(1 for r in records if r.ground_truth)
    return MetricReport(
        corloc=corloc(result, records),
        ap_by_sigma=ap_by_sigma,
        ap50=ap50,
        ap_range_mean=range_mean,
        detrate=rates,
        n_images=n_annotated,
        max_regions=m_max,
        per_class=classes,
    )


def _per_class_corloc(
    result: DiscoveryResult, records: Sequence[ImageRecord], name: str
) -> float:
    """CorLoc restricted to images containing ``name``, judged on that
    class's boxes only."""
    by_image = result.by_image()
    n = correct = 0
    for record in records:
        truths = [box for box, label in record.ground_truth if label == name]
        if not truths:
            continue
        n += 1
        sel = by_image.get(record.image_id)
        top = sel.top() if sel is not None else None
        if top is not None and any(iou(top.box, t) >= 0.5 for t in truths):
            correct += 1
    return 100.0 * correct / n if n else 0.0


def pr_curve(
    result: DiscoveryResult,
    records: Sequence[ImageRecord],
    sigma: float = 0.5,
    max_regions: int | None = None,
) -> list[tuple[int, float, float]]:
    """(m, precision, recall) rows for external plotting."""
    m_max = max_regions if max_regions is not None else result.config.max_per_image
    rows = []
    for m in range(1, m_max + 1):
        p, r = precision_recall_at(result, records, sigma, m)
        rows.append((m, p, r))
    return rows
