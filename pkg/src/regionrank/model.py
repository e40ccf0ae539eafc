"""Dataset object model: boxes, proposals, image records and node indexing.

Everything here is immutable after construction and safe to share
read-only across worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataValidationError, FormatError, GeometryError


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel coordinates, corners (min, max)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise GeometryError(
                f"degenerate box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "BoundingBox":
        x0, y0, x1, y1 = (float(v) for v in arr)
        return cls(x0, y0, x1, y1)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, using continuous areas.

    Symmetric, in [0, 1], and 0 for disjoint boxes.  Degenerate boxes cannot
    be constructed, so the union area is always positive.
    """
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class Proposal:
    """One candidate region: geometry, appearance feature, proposal group.

    ``group_id`` is 0 for ungrouped proposals.  ``saliency`` is optional and
    unused by the ranking solvers themselves.
    """

    box: BoundingBox
    feature: np.ndarray
    group_id: int = 0
    saliency: float | None = None

    def __post_init__(self):
        feat = np.asarray(self.feature, dtype=np.float32)
        if feat.ndim != 1:
            raise DataValidationError(f"proposal feature must be 1-D, got shape {feat.shape}")
        object.__setattr__(self, "feature", feat)
        if self.saliency is not None and self.saliency < 0:
            raise DataValidationError(f"negative saliency {self.saliency}")


@dataclass(frozen=True)
class ImageRecord:
    """An image's proposals plus the global descriptor used for retrieval."""

    image_id: str
    width: float
    height: float
    proposals: tuple[Proposal, ...]
    image_feature: np.ndarray
    ground_truth: tuple[tuple[BoundingBox, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "proposals", tuple(self.proposals))
        object.__setattr__(
            self, "image_feature", np.asarray(self.image_feature, dtype=np.float32)
        )
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))

    @property
    def n_proposals(self) -> int:
        return len(self.proposals)

    def proposal_features(self) -> np.ndarray:
        """Stack proposal features into an (r, d) float32 array."""
        return np.stack([p.feature for p in self.proposals])

    def proposal_boxes(self) -> np.ndarray:
        return np.stack([p.box.as_array() for p in self.proposals])


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    file: str
    n_proposals: int
    width: float
    height: float
    ground_truth: tuple[tuple[BoundingBox, str], ...] = ()


@dataclass(frozen=True)
class DatasetManifest:
    """Index of a stored dataset; binary payloads live in separate files."""

    n_images: int
    feature_dim: int
    image_feature_dim: int
    image_features_file: str
    entries: tuple[ManifestEntry, ...]
    class_vocabulary: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.image_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataValidationError("manifest contains duplicate image ids")
        if self.n_images != len(self.entries):
            raise DataValidationError(
                f"manifest n_images={self.n_images} but {len(self.entries)} entries"
            )

    @property
    def image_ids(self) -> list[str]:
        return [e.image_id for e in self.entries]


class NodeIndex:
    """Bijection between global node ids and (image, local proposal) pairs.

    Proposal counts may differ per image; N is their sum.
    """

    def __init__(self, counts: Sequence[int]):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 1 or (counts < 0).any():
            raise DataValidationError("proposal counts must be a 1-D nonnegative sequence")
        self._counts = counts
        self._offsets = np.concatenate([[0], np.cumsum(counts)])

    @classmethod
    def from_records(cls, records: Iterable[ImageRecord]) -> "NodeIndex":
        return cls([r.n_proposals for r in records])

    @property
    def n_images(self) -> int:
        return len(self._counts)

    @property
    def n_nodes(self) -> int:
        return int(self._offsets[-1])

    def count(self, image: int) -> int:
        return int(self._counts[image])

    def offset(self, image: int) -> int:
        return int(self._offsets[image])

    def image_slice(self, image: int) -> slice:
        return slice(int(self._offsets[image]), int(self._offsets[image + 1]))

    def to_global(self, image: int, local: int) -> int:
        if not 0 <= local < self._counts[image]:
            raise IndexError(f"local index {local} out of range for image {image}")
        return int(self._offsets[image] + local)

    def from_global(self, node: int) -> tuple[int, int]:
        if not 0 <= node < self.n_nodes:
            raise IndexError(f"node {node} out of range [0, {self.n_nodes})")
        image = int(np.searchsorted(self._offsets, node, side="right") - 1)
        return image, int(node - self._offsets[image])


@dataclass(frozen=True)
class Violation:
    """One validation finding.  ``kind`` is machine-readable."""

    image_id: str | None
    kind: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, image_id: str | None, kind: str, message: str) -> None:
        self.violations.append(Violation(image_id, kind, message))

    def __str__(self) -> str:
        if self.ok:
            return "dataset valid (0 violations)"
        lines = [f"{len(self.violations)} violation(s):"]
        lines += [f"  [{v.kind}] {v.image_id or '<dataset>'}: {v.message}" for v in self.violations]
        return "\n".join(lines)


def validate_dataset(manifest: DatasetManifest, records: Iterator[ImageRecord] | Iterable[ImageRecord]) -> ValidationReport:
    """Check a manifest plus its record stream for semantic violations.

    Records are consumed one at a time, so a lazy accessor can be validated
    without materializing the dataset.  Unreadable payloads are reported as
    ``format`` violations, distinct from semantic ones.
    """
    report = ValidationReport()
    seen: set[str] = set()
    by_id = {e.image_id: e for e in manifest.entries}

    it = iter(records)
    while True:
        try:
            rec = next(it)
        except StopIteration:
            break
        except FormatError as exc:
            report.add(None, "format", str(exc))
            continue

        if rec.image_id in seen:
            report.add(rec.image_id, "duplicate-id", "image id appears more than once")
            continue
        seen.add(rec.image_id)

        entry = by_id.get(rec.image_id)
        if entry is None:
            report.add(rec.image_id, "unknown-id", "record not listed in manifest")
            continue
        if entry.n_proposals != rec.n_proposals:
            report.add(
                rec.image_id,
                "count-mismatch",
                f"manifest lists {entry.n_proposals} proposals, file has {rec.n_proposals}",
            )
        if rec.image_feature.shape != (manifest.image_feature_dim,):
            report.add(
                rec.image_id,
                "dimension-mismatch",
                f"image feature dim {rec.image_feature.shape} != {manifest.image_feature_dim}",
            )
        for k, prop in enumerate(rec.proposals):
            if prop.feature.shape != (manifest.feature_dim,):
                report.add(
                    rec.image_id,
                    "dimension-mismatch",
                    f"proposal {k} feature dim {prop.feature.shape[0]} != {manifest.feature_dim}",
                )
            b = prop.box
            if b.x_min < 0 or b.y_min < 0 or b.x_max > rec.width or b.y_max > rec.height:
                report.add(
                    rec.image_id,
                    "out-of-bounds",
                    f"proposal {k} box ({b.x_min}, {b.y_min}, {b.x_max}, {b.y_max}) "
                    f"outside image {rec.width}x{rec.height}",
                )

    for image_id in by_id:
        if image_id not in seen:
            report.add(image_id, "missing-record", "manifest entry has no record")
    return report
