"""Greedy per-image region selection from a rank vector.

Within each image, proposals are visited in descending score order (ties:
larger area first, then lower local index).  The first proposal is always
kept; each later one is kept only if it overlaps every kept proposal by at
most ``iou_threshold`` and, when proposals carry nonzero group labels, comes
from a group no kept proposal uses.  Selection stops after ``max_per_image``
keeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataValidationError
from .model import BoundingBox, ImageRecord, iou


@dataclass(frozen=True)
class SelectionConfig:
    iou_threshold: float = 0.3
    max_per_image: int = 5
    use_groups: bool | None = None  # None: on exactly when labels are present

    def __post_init__(self):
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ConfigError(f"iou threshold must lie in [0, 1], got {self.iou_threshold}")
        if self.max_per_image < 1:
            raise ConfigError(f"max_per_image must be positive, got {self.max_per_image}")


@dataclass(frozen=True)
class SelectedRegion:
    """One kept proposal, with its provenance and rank score."""

    image_id: str
    proposal_index: int
    box: BoundingBox
    score: float
    rank: int  # 1-based position within the image's kept list
    group_id: int = 0


@dataclass(frozen=True)
class ImageSelection:
    image_id: str
    regions: tuple[SelectedRegion, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        for rank, region in enumerate(self.regions, start=1):
            if region.rank != rank:
                raise DataValidationError(
                    f"image {self.image_id!r}: region ranks must run 1..n in order"
                )

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    def top(self) -> SelectedRegion | None:
        return self.regions[0] if self.regions else None


@dataclass(frozen=True)
class DiscoveryResult:
    """Ordered selections for every image plus the parameters that made them.

    Construction re-checks the selection contract: at most ``max_per_image``
    regions per image, non-increasing scores, pairwise IoU within threshold,
    and distinct groups when grouping was forced on.
    """

    images: tuple[ImageSelection, ...]
    config: SelectionConfig

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        seen = set()
        for sel in self.images:
            if sel.image_id in seen:
                raise DataValidationError(f"duplicate selection for image {sel.image_id!r}")
            seen.add(sel.image_id)
            if sel.n_regions > self.config.max_per_image:
                raise DataValidationError(
                    f"image {sel.image_id!r}: {sel.n_regions} regions exceed the "
                    f"budget {self.config.max_per_image}"
                )
            for a, b in zip(sel.regions, sel.regions[1:]):
                if b.score > a.score:
                    raise DataValidationError(
                        f"image {sel.image_id!r}: scores must be non-increasing"
                    )
            for i, a in enumerate(sel.regions):
                for b in sel.regions[i + 1:]:
                    if iou(a.box, b.box) > self.config.iou_threshold:
                        raise DataValidationError(
                            f"image {sel.image_id!r}: kept regions overlap beyond "
                            f"{self.config.iou_threshold}"
                        )
                    if self.config.use_groups is True and a.group_id == b.group_id:
                        raise DataValidationError(
                            f"image {sel.image_id!r}: kept regions share group "
                            f"{a.group_id}"
                        )

    @property
    def n_images(self) -> int:
        return len(self.images)

    @property
    def image_ids(self) -> list[str]:
        return [sel.image_id for sel in self.images]

    def by_image(self) -> dict[str, ImageSelection]:
        return {sel.image_id: sel for sel in self.images}


def _visit_order(scores: np.ndarray, areas: np.ndarray) -> np.ndarray:
    return np.lexsort((np.arange(scores.size), -areas, -scores))


def select_regions(
    record: ImageRecord,
    scores: np.ndarray,
    config: SelectionConfig | None = None,
) -> ImageSelection:
    """Greedy selection for one image given this image's node scores."""
    cfg = config or SelectionConfig()
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (record.n_proposals,):
        raise DataValidationError(
            f"image {record.image_id!r}: expected {record.n_proposals} scores, "
            f"got {scores.shape}"
        )
    if record.n_proposals == 0:
        return ImageSelection(image_id=record.image_id)

    groups = np.array([p.group_id for p in record.proposals], dtype=np.int64)
    grouped = bool(groups.any()) if cfg.use_groups is None else cfg.use_groups
    areas = np.array([p.box.area for p in record.proposals], dtype=np.float64)

    kept: list[SelectedRegion] = []
    kept_boxes: list[BoundingBox] = []
    kept_groups: set[int] = set()
    for idx in _visit_order(scores, areas):
        proposal = record.proposals[idx]
        if kept:
            if grouped and proposal.group_id in kept_groups:
                continue
            if any(iou(proposal.box, b) > cfg.iou_threshold for b in kept_boxes):
                continue
        kept.append(
            SelectedRegion(
                image_id=record.image_id,
                proposal_index=int(idx),
                box=proposal.box,
                score=float(scores[idx]),
                rank=len(kept) + 1,
                group_id=proposal.group_id,
            )
        )
        kept_boxes.append(proposal.box)
        if grouped:
            kept_groups.add(proposal.group_id)
        if len(kept) >= cfg.max_per_image:
            break
    return ImageSelection(image_id=record.image_id, regions=tuple(kept))


def select_all(
    records: Sequence[ImageRecord],
    node_scores: np.ndarray,
    config: SelectionConfig | None = None,
) -> DiscoveryResult:
    """Run selection over a dataset with a flat per-node score vector laid
    out in record order."""
    cfg = config or SelectionConfig()
    node_scores = np.asarray(node_scores, dtype=np.float64)
    total = sum(r.n_proposals for r in records)
    if node_scores.shape != (total,):
        raise DataValidationError(
            f"expected {total} node scores for {len(records)} images, got {node_scores.shape}"
        )
    out = []
    offset = 0
    for record in records:
        out.append(select_regions(record, node_scores[offset:offset + record.n_proposals], cfg))
        offset += record.n_proposals
    return DiscoveryResult(images=tuple(out), config=cfg)


def single_object_view(result: DiscoveryResult) -> DiscoveryResult:
    """Keep only each image's top region (the single-object evaluation view)."""
    images = tuple(
        ImageSelection(image_id=sel.image_id, regions=sel.regions[:1]) for sel in result.images
    )
    return DiscoveryResult(images=images, config=result.config)
