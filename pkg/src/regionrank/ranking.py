"""Rank solvers over the proposal graph.

Three solvers share one chunked power-iteration kernel:

* ``solve_quadratic`` -- dominant eigenvector of the nonnegative adjacency,
  L2-normalized.  With the rank-one smoothing term the matrix is positive,
  so the limit is unique and strictly positive.
* ``solve_pagerank`` -- stationary vector of the personalized random walk
  ``(1 - beta) * W D^{-1} + beta * u e^T``, L1-normalized.
* ``solve_lod`` -- the two-stage hybrid: the eigenvector nominates one
  candidate per image, the top ``alpha`` fraction of those become a sparse
  uniform personalization, and the walk is re-solved around them.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, DataValidationError
from .graph import BlockAdjacency, matvec, transition_matvec
from .model import NodeIndex

NORM_TAGS = ("L1", "L2")
SOLVER_TAGS = ("Q", "P", "LOD")


@dataclass(frozen=True)
class RankingConfig:
    """Shared solver knobs.  Defaults follow the reference configuration.

    ``tolerance`` enables early stopping when the largest per-node change
    between iterates drops to it or below; ``None`` runs all ``iterations``.
    """

    beta: float = 1e-4
    gamma: float = 1e-4
    alpha: float = 0.10
    iterations: int = 50
    tolerance: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.gamma < 0.0:
            raise ConfigError(f"gamma must be nonnegative, got {self.gamma}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be positive, got {self.iterations}")
        if self.tolerance is not None and not self.tolerance > 0.0:
            raise ConfigError(f"tolerance must be positive, got {self.tolerance}")


@dataclass(frozen=True)
class RankVector:
    """A unit-normalized, nonnegative score per graph node."""

    values: np.ndarray
    norm: str
    solver: str

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise DataValidationError("rank values must form a 1-D vector")
        if self.norm not in NORM_TAGS:
            raise DataValidationError(f"unknown norm tag {self.norm!r}")
        if self.solver not in SOLVER_TAGS:
            raise DataValidationError(f"unknown solver tag {self.solver!r}")
        if not np.isfinite(values).all():
            raise DataValidationError("rank values must be finite")
        if values.size and values.min() < 0.0:
            raise DataValidationError("rank values must be nonnegative")
        length = np.linalg.norm(values, 1 if self.norm == "L1" else 2)
        if abs(length - 1.0) > 1e-6:
            raise DataValidationError(
                f"rank vector is not {self.norm}-normalized (norm={length!r})"
            )

    @property
    def n_nodes(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class PersonalizationVector:
    """Uniform mass over a sparse support: u[i] = 1/K on K chosen nodes."""

    values: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        support = np.ascontiguousarray(self.support, dtype=np.int64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "support", support)
        if support.size == 0:
            raise DataValidationError("personalization support is empty")
        if (np.diff(support) <= 0).any():
            raise DataValidationError("personalization support must be strictly increasing")
        if support[0] < 0 or support[-1] >= values.size:
            raise DataValidationError("personalization support out of range")
        mask = np.zeros(values.size, dtype=bool)
        mask[support] = True
        if values[~mask].any():
            raise DataValidationError("personalization mass found outside the support")
        on = values[mask]
        if on.size and ((on <= 0).any() or (on != on[0]).any()):
            raise DataValidationError("personalization mass must be uniform and positive")
        if abs(values.sum() - 1.0) > 1e-9:
            raise DataValidationError("personalization mass must sum to one")

    @property
    def k(self) -> int:
        return self.support.size


@dataclass(frozen=True)
class QuadraticResult:
    vector: RankVector
    eigenvalue: float
    n_iterations: int


@dataclass(frozen=True)
class PageRankResult:
    vector: RankVector
    n_iterations: int


@dataclass(frozen=True)
class LodResult:
    vector: RankVector
    quadratic: QuadraticResult
    personalization: PersonalizationVector
    pagerank_iterations: int


def _check_finite(norm: float, solver: str, iteration: int) -> None:
    if not np.isfinite(norm) or norm == 0.0:
        raise ConvergenceError(
            f"{solver} iterate collapsed at step {iteration} (norm={norm!r}); "
            "the graph may be empty with gamma=0"
        )


def solve_quadratic(
    adjacency: BlockAdjacency,
    config: RankingConfig | None = None,
    workers: int = 1,
) -> QuadraticResult:
    """Power iteration for the dominant eigenvector, from the uniform start."""
    cfg = config or RankingConfig()
    n = adjacency.n_nodes
    x = np.full(n, 1.0 / math.sqrt(n), dtype=np.float64)
    steps = 0
    for t in range(cfg.iterations):
        y = matvec(adjacency, x, workers=workers)
        norm = float(np.linalg.norm(y))
        _check_finite(norm, "Q", t)
        y /= norm
        steps = t + 1
        done = cfg.tolerance is not None and float(np.abs(y - x).max()) <= cfg.tolerance
        x = y
        if done:
            break
    eigenvalue = float(x @ matvec(adjacency, x, workers=workers))
    return QuadraticResult(
        vector=RankVector(values=x, norm="L2", solver="Q"),
        eigenvalue=eigenvalue,
        n_iterations=steps,
    )


def uniform_personalization(n_nodes: int) -> PersonalizationVector:
    if n_nodes <= 0:
        raise DataValidationError("need at least one node")
    return PersonalizationVector(
        values=np.full(n_nodes, 1.0 / n_nodes, dtype=np.float64),
        support=np.arange(n_nodes, dtype=np.int64),
    )


def solve_pagerank(
    adjacency: BlockAdjacency,
    degrees: np.ndarray,
    personalization: PersonalizationVector | None = None,
    start: np.ndarray | None = None,
    config: RankingConfig | None = None,
    workers: int = 1,
) -> PageRankResult:
    """Power iteration for the personalized walk, L1-normalized each step.

    The restart distribution defaults to uniform, and the start vector
    defaults to the restart distribution.
    """
    cfg = config or RankingConfig()
    n = adjacency.n_nodes
    u = personalization if personalization is not None else uniform_personalization(n)
    if u.values.size != n:
        raise DataValidationError("personalization length does not match the graph")
    v = np.array(u.values if start is None else start, dtype=np.float64)
    if v.shape != (n,):
        raise DataValidationError("start vector length does not match the graph")
    s = float(np.abs(v).sum())
    _check_finite(s, "P", 0)
    v /= s
    restart = cfg.beta * u.values
    steps = 0
    for t in range(cfg.iterations):
        if cfg.beta == 1.0:
            # Pure restart: the walk never moves, the limit is u itself
            # (already a distribution, so renormalizing would only add noise).
            y = restart.copy()
        else:
            y = (1.0 - cfg.beta) * transition_matvec(adjacency, degrees, v, workers=workers)
            y += restart
            norm = float(np.abs(y).sum())
            _check_finite(norm, "P", t)
            y /= norm
        steps = t + 1
        done = cfg.tolerance is not None and float(np.abs(y - v).max()) <= cfg.tolerance
        v = y
        if done:
            break
    return PageRankResult(
        vector=RankVector(values=v, norm="L1", solver="P"),
        n_iterations=steps,
    )


def build_personalization(
    scores: np.ndarray,
    node_index: NodeIndex,
    areas: np.ndarray,
    alpha: float = 0.10,
) -> PersonalizationVector:
    """Nominate each image's best-scoring node, keep the top ``alpha``
    fraction across images, and spread unit mass uniformly over them.

    Ties at the nomination step prefer the larger region, then the lower
    local index; ties across images prefer the larger region, then the
    lower global index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    areas = np.asarray(areas, dtype=np.float64)
    if scores.shape != (node_index.n_nodes,) or areas.shape != (node_index.n_nodes,):
        raise DataValidationError("scores and areas must have one entry per node")
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")

    nominees = np.empty(node_index.n_images, dtype=np.int64)
    for p in range(node_index.n_images):
        sl = node_index.image_slice(p)
        s, a = scores[sl], areas[sl]
        best = np.flatnonzero(s == s.max())
        if best.size > 1:
            best = best[a[best] == a[best].max()]
        nominees[p] = sl.start + best[0]

    k = max(1, int(math.floor(alpha * node_index.n_images)))
    order = np.lexsort((nominees, -areas[nominees], -scores[nominees]))
    chosen = np.sort(nominees[order[:k]])
    values = np.zeros(node_index.n_nodes, dtype=np.float64)
    values[chosen] = 1.0 / k
    return PersonalizationVector(values=values, support=chosen)


def solve_lod(
    adjacency: BlockAdjacency,
    degrees: np.ndarray,
    areas: np.ndarray,
    config: RankingConfig | None = None,
    workers: int = 1,
) -> LodResult:
    """Eigenvector nomination followed by a personalized re-walk."""
    cfg = config or RankingConfig()
    quadratic = solve_quadratic(adjacency, cfg, workers=workers)
    u = build_personalization(
        quadratic.vector.values, adjacency.node_index, areas, alpha=cfg.alpha
    )
    walked = solve_pagerank(
        adjacency, degrees, personalization=u, start=u.values, config=cfg, workers=workers
    )
    return LodResult(
        vector=dataclasses.replace(walked.vector, solver="LOD"),
        quadratic=quadratic,
        personalization=u,
        pagerank_iterations=walked.n_iterations,
    )
