"""Bit-exact on-disk formats: datasets, similarity blocks, rank vectors,
discovery results.

All binary payloads are little-endian and platform-independent.  Four magics:

* ``LODF`` -- per-image proposal file: features, boxes, group ids, saliency.
* ``LODI`` -- dataset-wide global image descriptors (one matrix).
* ``LODB`` -- one image pair's sparse similarity block as (k, l, score)
  triplets sorted by (k, l).
* ``LODR`` -- a rank vector with its norm and solver tags.

The manifest is a human-readable JSON document with one canonical key set;
unknown keys are rejected so stray documents fail loudly instead of being
half-read.  Anything that goes wrong while parsing a payload is raised as
``FormatError``; a missing file is ``MissingInputError``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO, Iterator, Sequence

import numpy as np

from .errors import DataValidationError, FormatError, GeometryError, MissingInputError
from .model import (
    BoundingBox,
    DatasetManifest,
    ImageRecord,
    ManifestEntry,
    NodeIndex,
    Proposal,
)
from .phm import SimilarityBlock
from .ranking import NORM_TAGS, SOLVER_TAGS, RankVector
from .selection import DiscoveryResult, ImageSelection, SelectedRegion, SelectionConfig

FORMAT_VERSION = 1

_MAGIC_FEATURES = b"LODF"
_MAGIC_IMAGE_FEATURES = b"LODI"
_MAGIC_BLOCK = b"LODB"
_MAGIC_RANKS = b"LODR"

_TRIPLET_DTYPE = np.dtype([("k", "<u4"), ("l", "<u4"), ("score", "<f4")])


# ---------------------------------------------------------------------------
# low-level helpers

def _read_exact(f: BinaryIO, n: int, path: Path, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated while reading {what}")
    return data


def _check_magic(f: BinaryIO, magic: bytes, path: Path) -> None:
    found = _read_exact(f, 4, path, "magic")
    if found != magic:
        raise FormatError(f"{path}: bad magic {found!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4, path, "version"))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")


def _check_consumed(f: BinaryIO, path: Path) -> None:
    if f.read(1):
        raise FormatError(f"{path}: trailing bytes after payload")


def _write_string(f: BinaryIO, value: str) -> None:
    data = value.encode("utf-8")
    if len(data) > 0xFFFF:
        raise DataValidationError(f"string too long to store: {value[:40]!r}...")
    f.write(struct.pack("<H", len(data)))
    f.write(data)


def _read_string(f: BinaryIO, path: Path, what: str) -> str:
    (length,) = struct.unpack("<H", _read_exact(f, 2, path, f"{what} length"))
    return _read_exact(f, length, path, what).decode("utf-8")


def _require_file(path: Path, what: str) -> None:
    if not path.is_file():
        raise MissingInputError(f"missing {what}: {path}")


# ---------------------------------------------------------------------------
# per-image proposal files (LODF)

def write_proposals(path: Path | str, proposals: Sequence[Proposal]) -> None:
    """Write one image's proposals: features, boxes, groups, saliency."""
    path = Path(path)
    n = len(proposals)
    if n:
        dims = {p.feature.shape[0] for p in proposals}
        if len(dims) != 1:
            raise DataValidationError(f"{path}: mixed feature dimensions {sorted(dims)}")
        d = dims.pop()
    else:
        d = 0
    for p in proposals:
        if not 0 <= p.group_id <= 0xFFFF:
            raise DataValidationError(f"{path}: group id {p.group_id} outside uint16 range")
    features = np.stack([p.feature for p in proposals]).astype("<f4") if n else \
        np.empty((0, 0), dtype="<f4")
    boxes = np.stack([p.box.as_array() for p in proposals]).astype("<f4") if n else \
        np.empty((0, 4), dtype="<f4")
    groups = np.array([p.group_id for p in proposals], dtype="<u2")
    saliency = np.array(
        [np.nan if p.saliency is None else p.saliency for p in proposals], dtype="<f4"
    )
    with open(path, "wb") as f:
        f.write(_MAGIC_FEATURES)
        f.write(struct.pack("<III", FORMAT_VERSION, n, d))
        f.write(features.tobytes())
        f.write(boxes.tobytes())
        f.write(groups.tobytes())
        f.write(saliency.tobytes())


def read_proposals(path: Path | str) -> list[Proposal]:
    path = Path(path)
    _require_file(path, "proposal file")
    with open(path, "rb") as f:
        _check_magic(f, _MAGIC_FEATURES, path)
        n, d = struct.unpack("<II", _read_exact(f, 8, path, "counts"))
        features = np.frombuffer(
            _read_exact(f, 4 * n * d, path, "features"), dtype="<f4"
        ).reshape(n, d)
        boxes = np.frombuffer(
            _read_exact(f, 16 * n, path, "boxes"), dtype="<f4"
        ).reshape(n, 4)
        groups = np.frombuffer(_read_exact(f, 2 * n, path, "group ids"), dtype="<u2")
        saliency = np.frombuffer(_read_exact(f, 4 * n, path, "saliency"), dtype="<f4")
        _check_consumed(f, path)
    out = []
    for i in range(n):
        try:
            box = BoundingBox.from_array(boxes[i].astype(np.float64))
            out.append(
                Proposal(
                    box=box,
                    feature=features[i],
                    group_id=int(groups[i]),
                    saliency=None if np.isnan(saliency[i]) else float(saliency[i]),
                )
            )
        except (GeometryError, DataValidationError) as exc:
            raise FormatError(f"{path}: proposal {i}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# dataset-wide image descriptor matrix (LODI)

def write_image_features(path: Path | str, features: np.ndarray) -> None:
    path = Path(path)
    features = np.ascontiguousarray(features, dtype="<f4")
    if features.ndim != 2:
        raise DataValidationError("image features must form an (n, d) matrix")
    with open(path, "wb") as f:
        f.write(_MAGIC_IMAGE_FEATURES)
        f.write(struct.pack("<III", FORMAT_VERSION, *features.shape))
        f.write(features.tobytes())


_IMAGE_FEATURES_HEADER = 16  # magic + version + n + d


def read_image_features(path: Path | str, mmap: bool = False) -> np.ndarray:
    """Read the (n, d) float32 descriptor matrix, optionally memory-mapped."""
    path = Path(path)
    _require_file(path, "image feature file")
    with open(path, "rb") as f:
        _check_magic(f, _MAGIC_IMAGE_FEATURES, path)
        n, d = struct.unpack("<II", _read_exact(f, 8, path, "counts"))
        if mmap:
            if path.stat().st_size != _IMAGE_FEATURES_HEADER + 4 * n * d:
                raise FormatError(f"{path}: payload length does not match header")
            return np.memmap(path, dtype="<f4", mode="r",
                             offset=_IMAGE_FEATURES_HEADER, shape=(n, d))
        data = np.frombuffer(_read_exact(f, 4 * n * d, path, "features"), dtype="<f4")
        _check_consumed(f, path)
    return data.reshape(n, d).copy()


# ---------------------------------------------------------------------------
# similarity blocks (LODB)

def write_block(path: Path | str, block: SimilarityBlock) -> None:
    path = Path(path)
    triplets = np.empty(block.nnz, dtype=_TRIPLET_DTYPE)
    triplets["k"] = block.rows
    triplets["l"] = block.cols
    triplets["score"] = block.scores
    with open(path, "wb") as f:
        f.write(_MAGIC_BLOCK)
        f.write(struct.pack("<I", FORMAT_VERSION))
        _write_string(f, block.image_p)
        _write_string(f, block.image_q)
        f.write(struct.pack("<III", block.shape[0], block.shape[1], block.nnz))
        f.write(triplets.tobytes())


def read_block(path: Path | str) -> SimilarityBlock:
    path = Path(path)
    _require_file(path, "block file")
    with open(path, "rb") as f:
        _check_magic(f, _MAGIC_BLOCK, path)
        image_p = _read_string(f, path, "image id")
        image_q = _read_string(f, path, "image id")
        r_p, r_q, nnz = struct.unpack("<III", _read_exact(f, 12, path, "block header"))
        triplets = np.frombuffer(
            _read_exact(f, _TRIPLET_DTYPE.itemsize * nnz, path, "triplets"),
            dtype=_TRIPLET_DTYPE,
        )
        _check_consumed(f, path)
    try:
        return SimilarityBlock(
            image_p=image_p,
            image_q=image_q,
            shape=(r_p, r_q),
            rows=triplets["k"].copy(),
            cols=triplets["l"].copy(),
            scores=triplets["score"].copy(),
        )
    except DataValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# rank vectors (LODR)

def write_ranks(path: Path | str, ranks: RankVector) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(_MAGIC_RANKS)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", ranks.n_nodes))
        f.write(ranks.norm.encode("ascii"))
        f.write(ranks.solver.encode("ascii").ljust(4))
        f.write(ranks.values.astype("<f8").tobytes())


def read_ranks(path: Path | str) -> RankVector:
    path = Path(path)
    _require_file(path, "rank file")
    with open(path, "rb") as f:
        _check_magic(f, _MAGIC_RANKS, path)
        (n,) = struct.unpack("<Q", _read_exact(f, 8, path, "length"))
        norm = _read_exact(f, 2, path, "norm tag").decode("ascii")
        solver = _read_exact(f, 4, path, "solver tag").decode("ascii").rstrip()
        if norm not in NORM_TAGS:
            raise FormatError(f"{path}: unknown norm tag {norm!r}")
        if solver not in SOLVER_TAGS:
            raise FormatError(f"{path}: unknown solver tag {solver!r}")
        values = np.frombuffer(_read_exact(f, 8 * n, path, "values"), dtype="<f8")
        _check_consumed(f, path)
    try:
        return RankVector(values=values.copy(), norm=norm, solver=solver)
    except DataValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# manifest (JSON, canonical key set)

_MANIFEST_KEYS = {
    "format_version", "n_images", "feature_dim", "image_feature_dim",
    "image_features_file", "class_vocabulary", "images",
}
_IMAGE_KEYS = {"image_id", "file", "n_proposals", "width", "height", "ground_truth"}
_GT_KEYS = {"box", "label"}


def _expect_keys(mapping: dict, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(mapping, dict):
        raise FormatError(f"{where}: expected an object")
    unknown = set(mapping) - allowed
    if unknown:
        raise FormatError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(mapping)
    if missing:
        raise FormatError(f"{where}: missing keys {sorted(missing)}")


def write_manifest(path: Path | str, manifest: DatasetManifest) -> None:
    path = Path(path)
    doc = {
        "format_version": FORMAT_VERSION,
        "n_images": manifest.n_images,
        "feature_dim": manifest.feature_dim,
        "image_feature_dim": manifest.image_feature_dim,
        "image_features_file": manifest.image_features_file,
        "class_vocabulary": (
            list(manifest.class_vocabulary) if manifest.class_vocabulary is not None else None
        ),
        "images": [
            {
                "image_id": e.image_id,
                "file": e.file,
                "n_proposals": e.n_proposals,
                "width": e.width,
                "height": e.height,
                "ground_truth": [
                    {"box": [float(v) for v in box.as_array()], "label": label}
                    for box, label in e.ground_truth
                ],
            }
            for e in manifest.entries
        ],
    }
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def read_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    _require_file(path, "manifest")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    _expect_keys(doc, _MANIFEST_KEYS, _MANIFEST_KEYS - {"class_vocabulary"}, str(path))
    if doc["format_version"] != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {doc['format_version']}")
    entries = []
    for i, img in enumerate(doc["images"]):
        where = f"{path}: images[{i}]"
        _expect_keys(img, _IMAGE_KEYS, _IMAGE_KEYS, where)
        gt = []
        for j, g in enumerate(img["ground_truth"]):
            _expect_keys(g, _GT_KEYS, _GT_KEYS, f"{where}.ground_truth[{j}]")
            try:
                gt.append((BoundingBox.from_array(g["box"]), str(g["label"])))
            except (GeometryError, TypeError, ValueError) as exc:
                raise FormatError(f"{where}.ground_truth[{j}]: {exc}") from exc
        entries.append(
            ManifestEntry(
                image_id=str(img["image_id"]),
                file=str(img["file"]),
                n_proposals=int(img["n_proposals"]),
                width=float(img["width"]),
                height=float(img["height"]),
                ground_truth=tuple(gt),
            )
        )
    vocab = doc.get("class_vocabulary")
    try:
        return DatasetManifest(
            n_images=int(doc["n_images"]),
            feature_dim=int(doc["feature_dim"]),
            image_feature_dim=int(doc["image_feature_dim"]),
            image_features_file=str(doc["image_features_file"]),
            entries=tuple(entries),
            class_vocabulary=tuple(vocab) if vocab is not None else None,
        )
    except DataValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# datasets

class Dataset:
    """Lazy per-image access over a stored dataset.

    Records are read on demand; the global descriptor matrix is memory-mapped,
    so iterating a large dataset keeps memory bounded by one image's payload.
    """

    def __init__(self, manifest: DatasetManifest, root: Path):
        self.manifest = manifest
        self.root = Path(root)
        self._positions = {e.image_id: i for i, e in enumerate(manifest.entries)}
        self._image_features = read_image_features(
            self.root / manifest.image_features_file, mmap=True
        )
        n, d = self._image_features.shape
        if n != manifest.n_images or d != manifest.image_feature_dim:
            raise FormatError(
                f"{self.root / manifest.image_features_file}: descriptor matrix is "
                f"{n}x{d}, manifest says {manifest.n_images}x{manifest.image_feature_dim}"
            )

    def __len__(self) -> int:
        return self.manifest.n_images

    @property
    def image_ids(self) -> list[str]:
        return self.manifest.image_ids

    def image_features(self) -> np.ndarray:
        """The (n, d) global descriptor matrix (memory-mapped, read-only)."""
        return self._image_features

    def record(self, image_id: str) -> ImageRecord:
        if image_id not in self._positions:
            raise DataValidationError(f"unknown image id {image_id!r}")
        i = self._positions[image_id]
        entry = self.manifest.entries[i]
        path = self.root / entry.file
        if not path.exists():
            raise MissingInputError(
                f"feature file for image {image_id!r} is missing: {path}"
            )
        proposals = read_proposals(path)
        return ImageRecord(
            image_id=entry.image_id,
            width=entry.width,
            height=entry.height,
            proposals=tuple(proposals),
            image_feature=np.array(self._image_features[i]),
            ground_truth=entry.ground_truth,
        )

    def __iter__(self) -> Iterator[ImageRecord]:
        for entry in self.manifest.entries:
            yield self.record(entry.image_id)

    def records(self) -> list[ImageRecord]:
        """Materialize every record (convenient at small scale)."""
        return list(self)

    def counts(self) -> list[int]:
        return [e.n_proposals for e in self.manifest.entries]

    def node_index(self) -> NodeIndex:
        return NodeIndex(self.counts())

    def validation_stream(self) -> "_ValidationStream":
        """Record iterator for validation: missing files are skipped (they
        surface as missing-record findings) and unreadable ones raise
        ``FormatError`` from ``__next__`` without ending the stream."""
        return _ValidationStream(self)


class _ValidationStream:
    def __init__(self, dataset: Dataset):
        self._dataset = dataset
        self._i = 0

    def __iter__(self) -> "_ValidationStream":
        return self

    def __next__(self) -> ImageRecord:
        entries = self._dataset.manifest.entries
        while self._i < len(entries):
            entry = entries[self._i]
            self._i += 1
            if not (self._dataset.root / entry.file).is_file():
                continue
            return self._dataset.record(entry.image_id)
        raise StopIteration


def load_dataset(manifest_path: Path | str) -> Dataset:
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    return Dataset(manifest, manifest_path.parent)


def write_dataset(
    root: Path | str,
    records: Sequence[ImageRecord],
    class_vocabulary: Sequence[str] | None = None,
    manifest_name: str = "manifest.json",
) -> Path:
    """Store records as a complete dataset directory; returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if not records:
        raise DataValidationError("cannot write an empty dataset")
    feature_dims = {p.feature.shape[0] for r in records for p in r.proposals}
    if len(feature_dims) > 1:
        raise DataValidationError(f"mixed proposal feature dimensions {sorted(feature_dims)}")
    feature_dim = feature_dims.pop() if feature_dims else 0
    image_dims = {r.image_feature.shape[0] for r in records}
    if len(image_dims) != 1:
        raise DataValidationError(f"mixed image feature dimensions {sorted(image_dims)}")

    width = len(str(len(records) - 1))
    entries = []
    for i, record in enumerate(records):
        file_name = f"image_{i:0{width}d}.lodf"
        write_proposals(root / file_name, record.proposals)
        entries.append(
            ManifestEntry(
                image_id=record.image_id,
                file=file_name,
                n_proposals=record.n_proposals,
                width=record.width,
                height=record.height,
                ground_truth=record.ground_truth,
            )
        )
    features_name = "image_features.lodi"
    write_image_features(root / features_name, np.stack([r.image_feature for r in records]))
    manifest = DatasetManifest(
        n_images=len(records),
        feature_dim=feature_dim,
        image_feature_dim=image_dims.pop(),
        image_features_file=features_name,
        entries=tuple(entries),
        class_vocabulary=tuple(class_vocabulary) if class_vocabulary is not None else None,
    )
    write_manifest(root / manifest_name, manifest)
    return root / manifest_name


# ---------------------------------------------------------------------------
# discovery results (JSON)

_RESULT_KEYS = {"format_version", "config", "images"}
_RESULT_CONFIG_KEYS = {"iou_threshold", "max_per_image", "use_groups"}
_RESULT_IMAGE_KEYS = {"image_id", "regions"}
_RESULT_REGION_KEYS = {"proposal_index", "box", "score", "rank", "group_id"}


def write_result(path: Path | str, result: DiscoveryResult) -> None:
    path = Path(path)
    doc = {
        "format_version": FORMAT_VERSION,
        "config": {
            "iou_threshold": result.config.iou_threshold,
            "max_per_image": result.config.max_per_image,
            "use_groups": result.config.use_groups,
        },
        "images": [
            {
                "image_id": sel.image_id,
                "regions": [
                    {
                        "proposal_index": r.proposal_index,
                        "box": [float(v) for v in r.box.as_array()],
                        "score": r.score,
                        "rank": r.rank,
                        "group_id": r.group_id,
                    }
                    for r in sel.regions
                ],
            }
            for sel in result.images
        ],
    }
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def read_result(path: Path | str) -> DiscoveryResult:
    path = Path(path)
    _require_file(path, "result file")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    _expect_keys(doc, _RESULT_KEYS, _RESULT_KEYS, str(path))
    if doc["format_version"] != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {doc['format_version']}")
    _expect_keys(doc["config"], _RESULT_CONFIG_KEYS, _RESULT_CONFIG_KEYS, f"{path}: config")
    cfg = doc["config"]
    try:
        config = SelectionConfig(
            iou_threshold=float(cfg["iou_threshold"]),
            max_per_image=int(cfg["max_per_image"]),
            use_groups=cfg["use_groups"] if cfg["use_groups"] is None else bool(cfg["use_groups"]),
        )
        images = []
        for i, img in enumerate(doc["images"]):
            where = f"{path}: images[{i}]"
            _expect_keys(img, _RESULT_IMAGE_KEYS, _RESULT_IMAGE_KEYS, where)
            regions = []
            for j, r in enumerate(img["regions"]):
                _expect_keys(r, _RESULT_REGION_KEYS, _RESULT_REGION_KEYS, f"{where}.regions[{j}]")
                regions.append(
                    SelectedRegion(
                        image_id=str(img["image_id"]),
                        proposal_index=int(r["proposal_index"]),
                        box=BoundingBox.from_array(r["box"]),
                        score=float(r["score"]),
                        rank=int(r["rank"]),
                        group_id=int(r["group_id"]),
                    )
                )
            images.append(
                ImageSelection(image_id=str(img["image_id"]), regions=tuple(regions))
            )
        return DiscoveryResult(images=tuple(images), config=config)
    except (DataValidationError, GeometryError, TypeError, ValueError, KeyError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
