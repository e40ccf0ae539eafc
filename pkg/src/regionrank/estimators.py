"""scikit-learn style facades over the functional pipeline.

``ProposalGraphRanker`` is transductive, like clustering estimators: ``fit``
ingests a set of image records, builds the proposal graph, and solves for
ranks; ``predict`` returns the discovery result for that same set.
``RegionClusterer`` wraps the deterministic k-means used for category
discovery with the standard estimator surface.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .category import _normalize_rows, _squared_distances, kmeans
from .errors import DataValidationError
from .graph import assemble, find_neighbors
from .model import ImageRecord
from .phm import HoughConfig, compute_blocks
from .ranking import RankingConfig, solve_lod, solve_pagerank, solve_quadratic
from .selection import DiscoveryResult, SelectionConfig, select_all
from .storage import Dataset

SOLVERS = ("quadratic", "pagerank", "lod")


class ProposalGraphRanker(BaseEstimator):
    """Rank and select object regions across an image collection.

    Parameters mirror the pipeline defaults: ``k_neighbors`` restricts
    similarity computation to each image's nearest neighbors, the Hough grid
    controls geometric binning, and ``solver`` picks the ranking scheme
    (``"quadratic"``, ``"pagerank"``, or the two-stage ``"lod"``).
    """

    def __init__(
        self,
        solver: str = "lod",
        k_neighbors: int = 100,
        beta: float = 1e-4,
        gamma: float = 1e-4,
        alpha: float = 0.10,
        iterations: int = 50,
        tolerance: float | None = None,
        translation_bins: int = 9,
        scale_bins: int = 5,
        scale_range: tuple[float, float] = (0.25, 4.0),
        score_threshold: float = 0.0,
        iou_threshold: float = 0.3,
        max_per_image: int = 5,
        use_groups: bool | None = None,
        workers: int = 1,
        n_chunks: int = 1,
    ):
        self.solver = solver
        self.k_neighbors = k_neighbors
        self.beta = beta
        self.gamma = gamma
        self.alpha = alpha
        self.iterations = iterations
        self.tolerance = tolerance
        self.translation_bins = translation_bins
        self.scale_bins = scale_bins
        self.scale_range = scale_range
        self.score_threshold = score_threshold
        self.iou_threshold = iou_threshold
        self.max_per_image = max_per_image
        self.use_groups = use_groups
        self.workers = workers
        self.n_chunks = n_chunks

    # -- estimator surface ---------------------------------------------------

    def fit(self, X, y=None) -> "ProposalGraphRanker":
        """Build the proposal graph over ``X`` and solve for ranks.

        ``X`` is a ``storage.Dataset`` or a sequence of ``ImageRecord``;
        ``y`` is ignored (discovery is unsupervised).
        """
        records = _coerce_records(X)
        if self.solver not in SOLVERS:
            raise DataValidationError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        for record in records:
            if record.n_proposals == 0:
                raise DataValidationError(
                    f"image {record.image_id!r} has no proposals; it cannot join the graph"
                )
        ranking_cfg = RankingConfig(
            beta=self.beta,
            gamma=self.gamma,
            alpha=self.alpha,
            iterations=self.iterations,
            tolerance=self.tolerance,
        )
        hough_cfg = HoughConfig(
            translation_bins=self.translation_bins,
            scale_bins=self.scale_bins,
            scale_range=self.scale_range,
            score_threshold=self.score_threshold,
        )

        neighbors = find_neighbors(
            np.stack([r.image_feature for r in records]).astype(np.float64), self.k_neighbors
        )
        blocks = compute_blocks(records, neighbors.pairs(), hough_cfg, workers=self.workers)
        adjacency, degrees = assemble(
            blocks,
            [(r.image_id, r.n_proposals) for r in records],
            gamma=self.gamma,
            n_chunks=self.n_chunks,
            neighbors=neighbors,
        )

        if self.solver == "quadratic":
            solved = solve_quadratic(adjacency, ranking_cfg, workers=self.workers)
            self.rank_vector_ = solved.vector
            self.eigenvalue_ = solved.eigenvalue
        elif self.solver == "pagerank":
            solved = solve_pagerank(adjacency, degrees, config=ranking_cfg, workers=self.workers)
            self.rank_vector_ = solved.vector
        else:
            areas = np.array(
                [p.box.area for r in records for p in r.proposals], dtype=np.float64
            )
            solved = solve_lod(adjacency, degrees, areas, ranking_cfg, workers=self.workers)
            self.rank_vector_ = solved.vector
            self.eigenvalue_ = solved.quadratic.eigenvalue
            self.personalization_ = solved.personalization

        self.records_ = records
        self.neighbors_ = neighbors
        self.node_index_ = adjacency.node_index
        self.degrees_ = degrees
        self.result_ = select_all(
            records,
            self.rank_vector_.values,
            SelectionConfig(
                iou_threshold=self.iou_threshold,
                max_per_image=self.max_per_image,
                use_groups=self.use_groups,
            ),
        )
        return self

    def predict(self, X=None) -> DiscoveryResult:
        """The discovery result for the fitted collection.

        Ranking is transductive; if ``X`` is given it must be the fitted
        collection again.
        """
        check_is_fitted(self, "result_")
        if X is not None:
            ids = [r.image_id for r in _coerce_records(X)]
            if ids != [r.image_id for r in self.records_]:
                raise DataValidationError(
                    "predict only covers the fitted image collection; refit for new images"
                )
        return self.result_

    def fit_predict(self, X, y=None) -> DiscoveryResult:
        return self.fit(X, y).predict()

    def transform(self, X=None) -> list[np.ndarray]:
        """Per-image arrays of node scores, in record order."""
        check_is_fitted(self, "result_")
        if X is not None:
            self.predict(X)  # collection identity check
        values = self.rank_vector_.values
        return [
            values[self.node_index_.image_slice(p)].copy()
            for p in range(self.node_index_.n_images)
        ]


class RegionClusterer(BaseEstimator):
    """Deterministic k-means over (optionally L2-normalized) feature rows."""

    def __init__(
        self,
        n_clusters: int = 8,
        seed: int = 0,
        iterations: int = 100,
        normalize: bool = True,
    ):
        self.n_clusters = n_clusters
        self.seed = seed
        self.iterations = iterations
        self.normalize = normalize

    def fit(self, X, y=None) -> "RegionClusterer":
        X = check_array(X, dtype=np.float64)
        clustering = kmeans(
            X, self.n_clusters, seed=self.seed, iterations=self.iterations,
            normalize=self.normalize,
        )
        self.clustering_ = clustering
        self.labels_ = clustering.assignments
        self.cluster_centers_ = clustering.centroids
        self.inertia_ = clustering.objective
        self.n_iter_ = clustering.n_iterations
        return self

    def fit_predict(self, X, y=None) -> np.ndarray:
        return self.fit(X, y).labels_

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        if self.normalize:
            X = _normalize_rows(X)
        return _squared_distances(X, self.cluster_centers_).argmin(axis=1)

    def transform(self, X) -> np.ndarray:
        """Euclidean distances to each centroid."""
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        if self.normalize:
            X = _normalize_rows(X)
        return np.sqrt(_squared_distances(X, self.cluster_centers_))


def _coerce_records(X) -> list[ImageRecord]:
    if isinstance(X, Dataset):
        return X.records()
    if isinstance(X, ImageRecord):
        raise DataValidationError("expected a collection of image records, got a single record")
    if isinstance(X, (Sequence, Iterable)):
        records = list(X)
        if not records:
            raise DataValidationError("cannot rank an empty image collection")
        bad = [r for r in records if not isinstance(r, ImageRecord)]
        if bad:
            raise DataValidationError(
                f"expected image records, found {type(bad[0]).__name__}"
            )
        return records
    raise DataValidationError(f"cannot interpret {type(X).__name__} as an image collection")
