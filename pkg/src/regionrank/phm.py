"""Hough-based similarity between the proposals of an image pair.

Each candidate match (k, l) votes its appearance affinity into a discretized
transformation bin (normalized center offset plus log scale ratio); the pair
score is the affinity reweighted by its bin's accumulated mass.  Two matches
are geometrically compatible exactly when they fall in the same bin.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataValidationError
from .model import BoundingBox, ImageRecord


@dataclass(frozen=True)
class HoughConfig:
    """Transformation grid and sparsification settings.

    Bin counts must be odd so the identity transform owns a central bin and
    the grid is symmetric under inversion (swapping the two images negates
    offsets and the log scale ratio).  ``scale_range`` must be log-symmetric,
    e.g. (1/4, 4).  Entries scoring below ``score_threshold`` are dropped
    from the sparse block; the default keeps everything.
    """

    translation_bins: int = 9
    scale_bins: int = 5
    scale_range: tuple[float, float] = (0.25, 4.0)
    score_threshold: float = 0.0

    def __post_init__(self):
        if self.translation_bins < 1 or self.scale_bins < 1:
            raise DataValidationError("bin counts must be >= 1")
        if self.translation_bins % 2 == 0 or self.scale_bins % 2 == 0:
            raise DataValidationError("bin counts must be odd (central bin required)")
        lo, hi = self.scale_range
        if not (0 < lo < hi):
            raise DataValidationError(f"invalid scale range {self.scale_range}")
        if abs(math.log(lo * hi)) > 1e-9:
            raise DataValidationError("scale_range must be symmetric in log space")
        if self.score_threshold < 0:
            raise DataValidationError("score_threshold must be nonnegative")

    @property
    def n_bins(self) -> int:
        return self.translation_bins * self.translation_bins * self.scale_bins


@dataclass(frozen=True)
class SimilarityBlock:
    """Sparse nonnegative score matrix for one (row image, column image) pair.

    Triplets are sorted by (row, col) and duplicate-free; scores are float32
    to match the on-disk layout bit for bit.
    """

    image_p: str
    image_q: str
    shape: tuple[int, int]
    rows: np.ndarray
    cols: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.uint32)
        cols = np.ascontiguousarray(self.cols, dtype=np.uint32)
        scores = np.ascontiguousarray(self.scores, dtype=np.float32)
        if not (rows.shape == cols.shape == scores.shape) or rows.ndim != 1:
            raise DataValidationError("triplet arrays must be 1-D and congruent")
        r_p, r_q = self.shape
        if rows.size:
            if rows.max(initial=0) >= r_p or cols.max(initial=0) >= r_q:
                raise DataValidationError("triplet index out of range")
            order = rows.astype(np.int64) * r_q + cols.astype(np.int64)
            if not (np.diff(order) > 0).all():
                raise DataValidationError("triplets must be sorted by (row, col), duplicate-free")
            if (scores < 0).any():
                raise DataValidationError("scores must be nonnegative")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "scores", scores)

    @property
    def nnz(self) -> int:
        return int(self.rows.size)

    def toarray(self) -> np.ndarray:
        dense = np.zeros(self.shape, dtype=np.float64)
        dense[self.rows, self.cols] = self.scores
        return dense

    def transposed(self) -> "SimilarityBlock":
        order = np.lexsort((self.rows, self.cols))
        return SimilarityBlock(
            image_p=self.image_q,
            image_q=self.image_p,
            shape=(self.shape[1], self.shape[0]),
            rows=self.cols[order],
            cols=self.rows[order],
            scores=self.scores[order],
        )

    @classmethod
    def from_dense(cls, image_p: str, image_q: str, dense: np.ndarray,
                   threshold: float = 0.0) -> "SimilarityBlock":
        dense = np.asarray(dense)
        keep = (dense > 0) & (dense >= threshold)
        rows, cols = np.nonzero(keep)
        return cls(
            image_p=image_p,
            image_q=image_q,
            shape=dense.shape,
            rows=rows,
            cols=cols,
            scores=dense[rows, cols],
        )


def appearance_matrix(features_p: np.ndarray, features_q: np.ndarray) -> np.ndarray:
    """Pairwise raw dot products, clamped at zero.

    Negative affinities would inject negative Hough mass and break the
    nonnegativity the eigen solvers rely on, so they contribute nothing.
    """
    features_p = np.asarray(features_p, dtype=np.float64)
    features_q = np.asarray(features_q, dtype=np.float64)
    if features_p.ndim != 2 or features_q.ndim != 2:
        raise DataValidationError("feature matrices must be 2-D")
    if features_p.shape[1] != features_q.shape[1]:
        raise DataValidationError(
            f"feature dimension mismatch: {features_p.shape[1]} vs {features_q.shape[1]}"
        )
    return np.maximum(features_p @ features_q.T, 0.0)


def _box_geometry(boxes: np.ndarray, width: float, height: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Diagonal-normalized centers and log scales for an (r, 4) box array."""
    diag = math.hypot(width, height)
    cx = 0.5 * (boxes[:, 0] + boxes[:, 2]) / diag
    cy = 0.5 * (boxes[:, 1] + boxes[:, 3]) / diag
    area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    log_scale = 0.5 * np.log(area) - math.log(diag)
    return cx, cy, log_scale


def transformation_bins(
    boxes_p: np.ndarray,
    size_p: tuple[float, float],
    boxes_q: np.ndarray,
    size_q: tuple[float, float],
    cfg: HoughConfig,
) -> np.ndarray:
    """Flat transformation-bin index for every proposal pair, shape (r_p, r_q).

    Offsets are normalized by each image's diagonal, so the binning does not
    depend on resolution.  Quantization rounds to the nearest bin center;
    out-of-range log scale ratios clamp to the boundary bins.
    """
    cx_p, cy_p, ls_p = _box_geometry(np.asarray(boxes_p, dtype=np.float64), *size_p)
    cx_q, cy_q, ls_q = _box_geometry(np.asarray(boxes_q, dtype=np.float64), *size_q)

    dx = cx_q[None, :] - cx_p[:, None]
    dy = cy_q[None, :] - cy_p[:, None]
    ds = ls_q[None, :] - ls_p[:, None]

    half_t = (cfg.translation_bins - 1) // 2
    half_s = (cfg.scale_bins - 1) // 2
    # Translation centers span [-1, 1]; a normalized offset never exceeds 1.
    w_t = 1.0 / half_t if half_t else 1.0
    w_s = math.log(cfg.scale_range[1]) / half_s if half_s else 1.0

    ix = np.clip(np.rint(dx / w_t), -half_t, half_t).astype(np.int64) + half_t
    iy = np.clip(np.rint(dy / w_t), -half_t, half_t).astype(np.int64) + half_t
    iscale = np.clip(np.rint(ds / w_s), -half_s, half_s).astype(np.int64) + half_s
    return (ix * cfg.translation_bins + iy) * cfg.scale_bins + iscale


def transformation_bin(
    box_k: BoundingBox,
    size_p: tuple[float, float],
    box_l: BoundingBox,
    size_q: tuple[float, float],
    cfg: HoughConfig,
) -> int:
    """Flat bin index for a single pair of boxes."""
    bins = transformation_bins(
        box_k.as_array()[None, :], size_p, box_l.as_array()[None, :], size_q, cfg
    )
    return int(bins[0, 0])


def compute_blocks(
    records: Sequence[ImageRecord],
    pairs: Sequence[tuple[int, int]],
    cfg: HoughConfig,
    workers: int = 1,
) -> list[SimilarityBlock]:
    """One similarity block per unordered image pair, in the given pair order.

    Blocks are independent, so parallel workers change nothing but wall time.
    """

    def one(pair: tuple[int, int]) -> SimilarityBlock:
        p, q = pair
        return phm_block(records[p], records[q], cfg)

    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, pairs))
    return [one(pair) for pair in pairs]


def phm_block(record_p: ImageRecord, record_q: ImageRecord, cfg: HoughConfig) -> SimilarityBlock:
    """Score all proposal pairs of an image pair.

    Two passes: every pair votes its clamped appearance affinity into its
    transformation bin, then each pair's score is its affinity times the
    total mass of its own bin (the pair's own vote included).
    """
    affinity = appearance_matrix(record_p.proposal_features(), record_q.proposal_features())
    bins = transformation_bins(
        record_p.proposal_boxes(),
        (record_p.width, record_p.height),
        record_q.proposal_boxes(),
        (record_q.width, record_q.height),
        cfg,
    )
    votes = np.bincount(bins.ravel(), weights=affinity.ravel(), minlength=cfg.n_bins)
    scores = affinity * votes[bins]
    return SimilarityBlock.from_dense(
        record_p.image_id, record_q.image_id, scores, threshold=cfg.score_threshold
    )
