"""Proposal graph assembly and the chunked matrix-vector kernel.

The N x N adjacency is held as row chunks (never splitting an image's
proposals) in CSR form with canonically sorted column indices.  Each output
element is therefore accumulated in ascending column order regardless of the
chunk count or worker count, which makes every product bitwise reproducible.
The rank-one irreducibility term gamma * e e^T / N is applied implicitly and
never materialized.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .errors import DanglingNodeError, DataValidationError
from .model import NodeIndex
from .phm import SimilarityBlock


@dataclass(frozen=True)
class NeighborList:
    """Per-image neighbor ids, nearest first.  An image never lists itself."""

    neighbors: tuple[np.ndarray, ...]
    k: int

    def __post_init__(self):
        object.__setattr__(
            self, "neighbors", tuple(np.asarray(a, dtype=np.int64) for a in self.neighbors)
        )
        for p, ids in enumerate(self.neighbors):
            if (ids == p).any():
                raise DataValidationError(f"image {p} lists itself as a neighbor")
            if ids.size > self.k:
                raise DataValidationError(f"image {p} has more than k={self.k} neighbors")

    @property
    def n_images(self) -> int:
        return len(self.neighbors)

    def pairs(self) -> list[tuple[int, int]]:
        """Unordered linked pairs (p < q), union of the directed relation."""
        seen = set()
        for p, ids in enumerate(self.neighbors):
            for q in ids:
                seen.add((min(p, int(q)), max(p, int(q))))
        return sorted(seen)


def find_neighbors(image_features: np.ndarray, k: int) -> NeighborList:
    """Exact k nearest neighbors under Euclidean distance.

    Ties break by ascending image index.  ``k >= n`` simply returns all
    other images.
    """
    feats = np.asarray(image_features, dtype=np.float64)
    if feats.ndim != 2:
        raise DataValidationError("image features must be an (n, d) matrix")
    n = feats.shape[0]
    k_eff = min(k, n - 1)
    out = []
    # Chunked explicit differences: same summation order as a per-pair loop,
    # so distances (and hence tie handling) match a naive oracle bitwise.
    block = max(1, min(n, 8_388_608 // max(1, n * feats.shape[1])))
    d2 = np.empty((n, n), dtype=np.float64)
    for start in range(0, n, block):
        stop = min(n, start + block)
        diff = feats[start:stop, None, :] - feats[None, :, :]
        d2[start:stop] = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    for p in range(n):
        order = np.argsort(d2[p], kind="stable")
        out.append(order[:k_eff].astype(np.int64))
    return NeighborList(neighbors=tuple(out), k=k)


@dataclass(frozen=True)
class AdjacencyChunk:
    first_image: int
    last_image: int  # exclusive
    row_start: int
    row_stop: int
    matrix: sparse.csr_matrix


class BlockAdjacency:
    """Symmetric proposal-graph matrix W stored as row chunks of blocks.

    Diagonal blocks are absent; each unordered pair is mirrored into both
    owning row images.  ``gamma`` adds the implicit rank-one term.
    """

    def __init__(self, chunks: Sequence[AdjacencyChunk], node_index: NodeIndex, gamma: float):
        if gamma < 0:
            raise DataValidationError("gamma must be nonnegative")
        self.chunks = list(chunks)
        self.node_index = node_index
        self.gamma = float(gamma)

    @property
    def n_nodes(self) -> int:
        return self.node_index.n_nodes

    @property
    def n_chunks(self) -> int:
        return len(self.chunks)

    def dense(self) -> np.ndarray:
        """Materialize W + gamma/N (tests and small instances only)."""
        w = sparse.vstack([c.matrix for c in self.chunks], format="csr").toarray()
        if self.gamma:
            w = w + self.gamma / self.n_nodes
        return w

    @classmethod
    def from_dense(cls, dense: np.ndarray, gamma: float = 0.0, n_chunks: int = 1,
                   counts: Sequence[int] | None = None) -> "BlockAdjacency":
        """Wrap an explicit symmetric matrix; rows group into one-node images
        unless ``counts`` says otherwise.  Intended for tests and oracles."""
        dense = np.asarray(dense, dtype=np.float64)
        n = dense.shape[0]
        index = NodeIndex(counts if counts is not None else [1] * n)
        if index.n_nodes != n:
            raise DataValidationError("counts do not cover the matrix")
        boundaries = _chunk_boundaries(index, n_chunks)
        chunks = []
        for first, last in boundaries:
            r0, r1 = index.offset(first), index.offset(last - 1) + index.count(last - 1)
            m = sparse.csr_matrix(dense[r0:r1])
            m.sort_indices()
            chunks.append(AdjacencyChunk(first, last, r0, r1, m))
        return cls(chunks, index, gamma)


def _chunk_boundaries(index: NodeIndex, n_chunks: int) -> list[tuple[int, int]]:
    """Partition images into contiguous chunks balanced by node count."""
    n_images = index.n_images
    n_chunks = max(1, min(n_chunks, n_images))
    total = index.n_nodes
    cuts = [0]
    for c in range(1, n_chunks):
        target = total * c / n_chunks
        pos = int(np.searchsorted([index.offset(p + 1) for p in range(n_images)], target, side="left")) + 1
        pos = min(max(pos, cuts[-1] + 1), n_images - (n_chunks - c))
        cuts.append(pos)
    cuts.append(n_images)
    return [(cuts[i], cuts[i + 1]) for i in range(n_chunks)]


def assemble(
    blocks: Iterable[SimilarityBlock],
    images: Sequence[tuple[str, int]],
    gamma: float = 1e-4,
    n_chunks: int = 1,
    neighbors: NeighborList | None = None,
) -> tuple["BlockAdjacency", np.ndarray]:
    """Build the symmetric block adjacency and its degree vector.

    ``images`` fixes the node layout as (image_id, proposal_count) in graph
    order.  Each block is mirrored into both row images.  When ``neighbors``
    is given, every block's pair must be linked in at least one direction.

    Returns (adjacency, degrees) where degrees include the gamma column
    contribution and are accumulated image by image in ascending order, so
    they do not depend on the chunking.
    """
    ids = [i for i, _ in images]
    pos = {image_id: p for p, (image_id, _) in enumerate(images)}
    index = NodeIndex([r for _, r in images])
    n = len(ids)
    N = index.n_nodes

    linked = None
    if neighbors is not None:
        if neighbors.n_images != n:
            raise DataValidationError("neighbor list does not match the image set")
        linked = set(neighbors.pairs())

    per_image: list[list[tuple[int, SimilarityBlock, bool]]] = [[] for _ in range(n)]
    seen_pairs = set()
    for blk in blocks:
        if blk.image_p not in pos or blk.image_q not in pos:
            missing = blk.image_p if blk.image_p not in pos else blk.image_q
            raise DataValidationError(f"block references unknown image {missing!r}")
        p, q = pos[blk.image_p], pos[blk.image_q]
        if p == q:
            raise DataValidationError(f"diagonal block for image {blk.image_p!r} not allowed")
        if blk.shape != (index.count(p), index.count(q)):
            raise DataValidationError(
                f"block {blk.image_p!r}x{blk.image_q!r} shape {blk.shape} does not match layout"
            )
        key = (min(p, q), max(p, q))
        if key in seen_pairs:
            raise DataValidationError(f"duplicate block for pair {ids[key[0]]!r}, {ids[key[1]]!r}")
        seen_pairs.add(key)
        if linked is not None and key not in linked:
            raise DataValidationError(
                f"block pair {ids[key[0]]!r}, {ids[key[1]]!r} is not neighbor-linked"
            )
        per_image[p].append((q, blk, False))
        per_image[q].append((p, blk, True))

    image_rows: list[sparse.csr_matrix] = []
    for p in range(n):
        r_p = index.count(p)
        rows_parts, cols_parts, data_parts = [], [], []
        for q, blk, transposed in sorted(per_image[p], key=lambda t: t[0]):
            if transposed:
                r, c, s = blk.cols, blk.rows, blk.scores
            else:
                r, c, s = blk.rows, blk.cols, blk.scores
            rows_parts.append(r.astype(np.int64))
            cols_parts.append(c.astype(np.int64) + index.offset(q))
            data_parts.append(s.astype(np.float64))
        if rows_parts:
            m = sparse.csr_matrix(
                (np.concatenate(data_parts), (np.concatenate(rows_parts), np.concatenate(cols_parts))),
                shape=(r_p, N),
            )
            m.sort_indices()
        else:
            m = sparse.csr_matrix((r_p, N), dtype=np.float64)
        image_rows.append(m)

    boundaries = _chunk_boundaries(index, n_chunks)
    chunks = []
    for first, last in boundaries:
        m = sparse.vstack(image_rows[first:last], format="csr")
        m.sort_indices()
        chunks.append(
            AdjacencyChunk(first, last, index.offset(first), index.offset(last - 1) + index.count(last - 1), m)
        )
    adjacency = BlockAdjacency(chunks, index, gamma)

    # Degrees accumulate per image in ascending order: grouping never depends
    # on the chunk boundaries, keeping downstream solves bitwise stable.
    degrees = np.zeros(N, dtype=np.float64)
    for m in image_rows:
        degrees += np.asarray(m.sum(axis=0)).ravel()
    if gamma:
        degrees += gamma
    return adjacency, degrees


def matvec(adjacency: BlockAdjacency, x: np.ndarray, workers: int = 1) -> np.ndarray:
    """(W + gamma/N * e e^T) x with the rank-one term applied implicitly."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (adjacency.n_nodes,):
        raise DataValidationError(f"vector length {x.shape} != {adjacency.n_nodes}")
    out = np.empty_like(x)

    def run(chunk: AdjacencyChunk) -> None:
        out[chunk.row_start:chunk.row_stop] = chunk.matrix @ x

    if workers > 1 and len(adjacency.chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, adjacency.chunks))
    else:
        for chunk in adjacency.chunks:
            run(chunk)

    if adjacency.gamma:
        out += (adjacency.gamma / adjacency.n_nodes) * x.sum()
    return out


def transition_matvec(
    adjacency: BlockAdjacency, degrees: np.ndarray, x: np.ndarray, workers: int = 1
) -> np.ndarray:
    """A x where A = W_gamma D^{-1} is column-stochastic."""
    degrees = np.asarray(degrees, dtype=np.float64)
    if (degrees <= 0).any():
        if adjacency.gamma == 0:
            bad = int(np.argmin(degrees))
            raise DanglingNodeError(
                f"node {bad} has zero degree and gamma=0; the walk has nowhere to go"
            )
        raise DataValidationError("degree vector must be strictly positive")
    return matvec(adjacency, np.asarray(x, dtype=np.float64) / degrees, workers=workers)
