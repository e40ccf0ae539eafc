"""Category discovery on top of selected regions.

Images are compared through their selected proposals (max cosine similarity
over selected pairs), retrieved as neighbors, clustered with k-means on
L2-normalized selected features, and clusters are scored against ground-truth
classes via per-image 1/(n*c) contributions, then paired to classes with the
Gale-Shapley stable matching.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection, Sequence

import numpy as np

from .errors import DataValidationError
from .graph import NeighborList
from .model import ImageRecord
from .selection import DiscoveryResult


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalize rows; all-zero rows stay zero instead of becoming NaN."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def selected_features(result: DiscoveryResult, records: Sequence[ImageRecord]) -> np.ndarray:
    """Each image's top selected proposal feature, stacked (n, d), raw scale."""
    by_image = result.by_image()
    rows = []
    for record in records:
        sel = by_image.get(record.image_id)
        if sel is None or sel.n_regions == 0:
            raise DataValidationError(f"image {record.image_id!r} has no selected region")
        rows.append(record.proposals[sel.regions[0].proposal_index].feature)
    return np.stack(rows).astype(np.float64)


@dataclass(frozen=True)
class ImageSimilarityMatrix:
    """Symmetric max-cosine similarity between images' selected proposals."""

    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DataValidationError("similarity matrix must be square")
        if not np.allclose(values, values.T, atol=1e-9):
            raise DataValidationError("similarity matrix must be symmetric")
        if values.size and (values.min() < -1.0 - 1e-9 or values.max() > 1.0 + 1e-9):
            raise DataValidationError("cosine similarities must lie in [-1, 1]")

    @property
    def n_images(self) -> int:
        return self.values.shape[0]


def image_similarity(
    result: DiscoveryResult, records: Sequence[ImageRecord]
) -> ImageSimilarityMatrix:
    """sim(p, q) = max cosine similarity over selected-proposal pairs."""
    by_image = result.by_image()
    empty = [r.image_id for r in records
             if by_image.get(r.image_id) is None or by_image[r.image_id].n_regions == 0]
    if empty:
        raise DataValidationError(f"images with empty selections: {empty[:5]}")
    per_image = []
    for record in records:
        sel = by_image[record.image_id]
        feats = np.stack(
            [record.proposals[reg.proposal_index].feature for reg in sel.regions]
        ).astype(np.float64)
        per_image.append(_normalize_rows(feats))
    n = len(per_image)
    sim = np.empty((n, n), dtype=np.float64)
    for p in range(n):
        sim[p, p] = float((per_image[p] @ per_image[p].T).max()) if per_image[p].size else 0.0
        for q in range(p + 1, n):
            best = float((per_image[p] @ per_image[q].T).max())
            sim[p, q] = best
            sim[q, p] = best
    return ImageSimilarityMatrix(values=sim)


def retrieve_neighbors(sim: ImageSimilarityMatrix, k: int = 10) -> NeighborList:
    """Top-k most similar images per image, never including itself.

    Ties break by ascending image index; requires k < n.
    """
    n = sim.n_images
    if not 1 <= k < n:
        raise DataValidationError(f"k must satisfy 1 <= k < n={n}, got {k}")
    out = []
    for p in range(n):
        row = sim.values[p].copy()
        row[p] = -np.inf
        order = np.argsort(-row, kind="stable")
        out.append(order[:k].astype(np.int64))
    return NeighborList(neighbors=tuple(out), k=k)


@dataclass(frozen=True)
class Clustering:
    assignments: np.ndarray
    centroids: np.ndarray
    objective: float
    n_iterations: int

    def __post_init__(self):
        assignments = np.ascontiguousarray(self.assignments, dtype=np.int64)
        centroids = np.ascontiguousarray(self.centroids, dtype=np.float64)
        object.__setattr__(self, "assignments", assignments)
        object.__setattr__(self, "centroids", centroids)
        if assignments.ndim != 1 or centroids.ndim != 2:
            raise DataValidationError("assignments must be 1-D and centroids 2-D")
        if assignments.size and not (0 <= assignments.min() and assignments.max() < self.k):
            raise DataValidationError("assignments reference unknown clusters")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def n_points(self) -> int:
        return self.assignments.size

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster)


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kmeans(
    features: np.ndarray,
    k: int,
    seed: int = 0,
    iterations: int = 100,
    normalize: bool = True,
) -> Clustering:
    """Lloyd's algorithm with probabilistic spread seeding, deterministic
    under a fixed seed.  Empty clusters re-seed from the farthest point.
    """
    points = np.asarray(features, dtype=np.float64)
    if points.ndim != 2:
        raise DataValidationError("features must form an (n, d) matrix")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise DataValidationError(f"k must satisfy 1 <= k <= n={n}, got {k}")
    if normalize:
        points = _normalize_rows(points)

    rng = np.random.default_rng(seed)
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    closest = _squared_distances(points, centroids[:1]).min(axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            probs = closest / total
            pick = int(rng.choice(n, p=probs))
        else:
            pick = int(rng.integers(n))
        centroids[c] = points[pick]
        closest = np.minimum(closest, _squared_distances(points, centroids[c:c + 1]).min(axis=1))

    assignments = np.full(n, -1, dtype=np.int64)
    steps = 0
    for t in range(iterations):
        d2 = _squared_distances(points, centroids)
        new_assignments = d2.argmin(axis=1)
        steps = t + 1
        if (new_assignments == assignments).all():
            break
        assignments = new_assignments
        nearest = d2[np.arange(n), assignments]
        for c in range(k):
            members = assignments == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
            else:
                far = int(nearest.argmax())
                centroids[c] = points[far]
                nearest[far] = 0.0
    d2 = _squared_distances(points, centroids)
    assignments = d2.argmin(axis=1)
    objective = float(d2[np.arange(n), assignments].sum())
    return Clustering(
        assignments=assignments, centroids=centroids, objective=objective, n_iterations=steps
    )


def purity(clustering: Clustering, labels: Sequence[str]) -> float:
    """Size-weighted dominant-class share: 100 * (sum of per-cluster
    dominant counts) / n.  Every image must carry exactly one label."""
    if len(labels) != clustering.n_points:
        raise DataValidationError("need one label per clustered image")
    for i, label in enumerate(labels):
        if not label:
            raise DataValidationError(f"image at position {i} is unlabeled")
    dominant = 0
    for c in range(clustering.k):
        members = clustering.members(c)
        if members.size == 0:
            continue
        counts: dict[str, int] = {}
        for i in members:
            counts[labels[int(i)]] = counts.get(labels[int(i)], 0) + 1
        dominant += max(counts.values())
    return 100.0 * dominant / clustering.n_points


@dataclass(frozen=True)
class ClusterHistograms:
    """Per-cluster class scores: each member image spreads 1/(n*c) mass over
    its c classes, where n is the cluster size.  Rows sum to 1 when every
    member is labeled."""

    classes: tuple[str, ...]
    scores: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        sizes = np.ascontiguousarray(self.sizes, dtype=np.int64)
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "sizes", sizes)
        if scores.shape != (sizes.size, len(self.classes)):
            raise DataValidationError("histogram shape must be (n_clusters, n_classes)")
        if scores.size and scores.min() < 0:
            raise DataValidationError("histogram scores must be nonnegative")
        if scores.size and (scores.sum(axis=1) > 1.0 + 1e-9).any():
            raise DataValidationError("per-cluster scores cannot exceed 1")

    @property
    def n_clusters(self) -> int:
        return self.sizes.size


def cluster_histograms(
    clustering: Clustering,
    multi_labels: Sequence[Collection[str]],
    classes: Sequence[str] | None = None,
) -> ClusterHistograms:
    if len(multi_labels) != clustering.n_points:
        raise DataValidationError("need one label set per clustered image")
    if classes is None:
        classes = sorted({label for labels in multi_labels for label in labels})
    index = {name: j for j, name in enumerate(classes)}
    scores = np.zeros((clustering.k, len(classes)), dtype=np.float64)
    sizes = np.zeros(clustering.k, dtype=np.int64)
    for c in range(clustering.k):
        members = clustering.members(c)
        sizes[c] = members.size
        if members.size == 0:
            continue
        for i in members:
            labels = multi_labels[int(i)]
            if not labels:
                continue
            share = 1.0 / (members.size * len(labels))
            for label in labels:
                if label not in index:
                    raise DataValidationError(f"label {label!r} missing from class list")
                scores[c, index[label]] += share
    return ClusterHistograms(classes=tuple(classes), scores=scores, sizes=sizes)


def match_clusters(histograms: ClusterHistograms) -> tuple[tuple[int, str], ...]:
    """Stable cluster-to-class matching, clusters proposing.

    Preferences on both sides follow descending histogram score with ties
    broken by ascending index; the smaller side ends fully matched.
    """
    scores = histograms.scores
    n_clusters, n_classes = scores.shape
    if n_classes == 0:
        raise DataValidationError("no classes to match against")
    prefs = [
        list(np.lexsort((np.arange(n_classes), -scores[c]))) for c in range(n_clusters)
    ]
    # class_rank[j][c] = position of cluster c in class j's preference order
    class_rank = np.empty((n_classes, n_clusters), dtype=np.int64)
    for j in range(n_classes):
        order = np.lexsort((np.arange(n_clusters), -scores[:, j]))
        class_rank[j, order] = np.arange(n_clusters)

    engaged: dict[int, int] = {}  # class -> cluster
    next_choice = [0] * n_clusters
    free = list(range(n_clusters - 1, -1, -1))
    while free:
        c = free.pop()
        while next_choice[c] < n_classes:
            j = int(prefs[c][next_choice[c]])
            next_choice[c] += 1
            if j not in engaged:
                engaged[j] = c
                break
            rival = engaged[j]
            if class_rank[j, c] < class_rank[j, rival]:
                engaged[j] = c
                free.append(rival)
                break
    pairs = sorted((c, histograms.classes[j]) for j, c in engaged.items())
    return tuple(pairs)
