"""Deterministic synthetic datasets with planted objects.

Each class owns a latent feature prototype and, per planted slot, a
class-canonical normalized box.  Images of a class plant ``planted_per_image``
proposals whose features are ``signal_strength * prototype + noise`` and
whose geometry repeats the canonical box up to a small jitter, so matched
pairs across images land in the same transformation bin and reinforce each
other.  Remaining proposals are distractors with independent noise features
and random geometry.

Class prototypes are orthonormal, so cross-class affinities are clamped
noise rather than chance prototype alignments, and class strengths taper
slightly (``strength_spread``) so one class is unambiguously the most
salient — mirroring real collections, where categories differ in how
distinctive they look.

One distractor per image is special: a shared "background" region at the
same normalized position in every image, with a common weak prototype scaled
by ``background_strength`` plus a faint class component (``context_affinity``,
for the way context co-occurs with its category).  It mimics the
ever-present near-duplicate context regions of real collections: too weak to
win under diffusive ranking, but the best-connected fallback wherever
restart mass starves the walk.  Setting ``background_strength`` to 0 removes
it.

Generation is single-threaded and byte-deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, MissingInputError
from .model import BoundingBox, ImageRecord, Proposal
from .storage import FORMAT_VERSION, write_dataset

# Normalized (cx, cy, w, h) anchors for up to three planted slots, laid out
# to stay pairwise disjoint after per-class offsets and jitter.
_SLOT_ANCHORS = ((0.32, 0.36, 0.30, 0.26), (0.72, 0.30, 0.26, 0.24), (0.50, 0.74, 0.28, 0.22))
_BACKGROUND_ANCHOR = (0.50, 0.90, 0.56, 0.10)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    n_images: int = 200
    proposals_per_image: int = 20
    feature_dim: int = 32
    n_classes: int = 5
    signal_strength: float = 5.75
    strength_spread: float = 0.1
    noise_sigma: float = 0.3
    planted_per_image: int = 1
    jitter: float = 0.02
    background_strength: float = 3.0
    context_affinity: float = 3.0

    def __post_init__(self):
        if self.signal_strength <= 0:
            raise ConfigError(f"signal_strength must be positive, got {self.signal_strength}")
        if not 1 <= self.planted_per_image <= len(_SLOT_ANCHORS):
            raise ConfigError(
                f"planted_per_image must lie in 1..{len(_SLOT_ANCHORS)}, "
                f"got {self.planted_per_image}"
            )
        reserved = self.planted_per_image + (1 if self.background_strength > 0 else 0)
        if self.proposals_per_image < reserved:
            raise ConfigError(
                f"need at least {reserved} proposals per image, got {self.proposals_per_image}"
            )
        if self.n_images < 1 or self.n_classes < 1 or self.feature_dim < 1:
            raise ConfigError("n_images, n_classes, and feature_dim must be positive")
        if self.feature_dim < self.n_classes + 1:
            raise ConfigError(
                f"feature_dim must be at least {self.n_classes + 1} for orthonormal "
                "class and background prototypes"
            )
        if self.image_feature_dim < self.n_classes:
            raise ConfigError(
                f"image_feature_dim {self.image_feature_dim} cannot fit "
                f"{self.n_classes} orthonormal image prototypes"
            )
        if self.noise_sigma < 0 or self.jitter < 0 or self.background_strength < 0:
            raise ConfigError("noise_sigma, jitter, and background_strength must be nonnegative")
        if self.strength_spread < 0 or self.context_affinity < 0:
            raise ConfigError("strength_spread and context_affinity must be nonnegative")

    @property
    def image_feature_dim(self) -> int:
        return max(8, self.feature_dim // 2)


@dataclass(frozen=True)
class PlantedImage:
    image_id: str
    class_name: str
    planted: tuple[int, ...]


@dataclass(frozen=True)
class PlantedTruth:
    images: tuple[PlantedImage, ...]

    def by_image(self) -> dict[str, PlantedImage]:
        return {img.image_id: img for img in self.images}


def _snap(values) -> np.ndarray:
    """Round to float32 so stored payloads and manifest agree exactly."""
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def _orthonormal(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """(count, dim) orthonormal rows, deterministic for a fixed generator."""
    q, r = np.linalg.qr(rng.standard_normal((dim, count)))
    return (q * np.sign(np.diag(r))).T


def _box_from_normalized(
    cx: float, cy: float, w: float, h: float, width: int, height: int
) -> BoundingBox:
    x0 = np.clip((cx - w / 2.0) * width, 0.0, width - 2.0)
    y0 = np.clip((cy - h / 2.0) * height, 0.0, height - 2.0)
    x1 = np.clip((cx + w / 2.0) * width, x0 + 1.0, float(width))
    y1 = np.clip((cy + h / 2.0) * height, y0 + 1.0, float(height))
    coords = _snap([x0, y0, x1, y1])
    return BoundingBox(*coords)


def build_records(cfg: SynthConfig) -> tuple[list[ImageRecord], PlantedTruth]:
    """Generate the dataset in memory; deterministic for a fixed seed."""
    rng = np.random.default_rng(cfg.seed)
    d, gdim = cfg.feature_dim, cfg.image_feature_dim

    directions = _orthonormal(rng, cfg.n_classes + 1, d)
    prototypes, background_prototype = directions[:-1], directions[-1]
    image_prototypes = _orthonormal(rng, cfg.n_classes, gdim)
    if cfg.n_classes > 1:
        taper = np.linspace(1.0 + cfg.strength_spread, 1.0, cfg.n_classes)
    else:
        taper = np.ones(1)
    strengths = cfg.signal_strength * taper
    # Per (class, slot): anchored canonical geometry with a class-specific twist.
    canonical = np.empty((cfg.n_classes, cfg.planted_per_image, 4), dtype=np.float64)
    for c in range(cfg.n_classes):
        for t in range(cfg.planted_per_image):
            ax, ay, aw, ah = _SLOT_ANCHORS[t]
            canonical[c, t, 0] = ax + rng.uniform(-0.06, 0.06)
            canonical[c, t, 1] = ay + rng.uniform(-0.06, 0.06)
            canonical[c, t, 2] = aw * np.exp(rng.uniform(-0.12, 0.12))
            canonical[c, t, 3] = ah * np.exp(rng.uniform(-0.12, 0.12))

    use_background = cfg.background_strength > 0
    id_width = len(str(cfg.n_images - 1))
    records: list[ImageRecord] = []
    truth: list[PlantedImage] = []
    for i in range(cfg.n_images):
        c = i % cfg.n_classes
        class_name = f"class-{c}"
        width = int(rng.integers(360, 640))
        height = int(rng.integers(300, 520))
        diagonal = float(np.hypot(width, height))

        proposals: list[Proposal] = []
        ground_truth: list[tuple[BoundingBox, str]] = []
        planted_indices = []
        for t in range(cfg.planted_per_image):
            cx, cy, w, h = canonical[c, t]
            cx = cx + rng.normal(0.0, cfg.jitter) * diagonal / width
            cy = cy + rng.normal(0.0, cfg.jitter) * diagonal / height
            w = w * np.exp(rng.normal(0.0, cfg.jitter))
            h = h * np.exp(rng.normal(0.0, cfg.jitter))
            box = _box_from_normalized(cx, cy, w, h, width, height)
            feature = strengths[c] * prototypes[c] + rng.normal(0.0, cfg.noise_sigma, d)
            planted_indices.append(len(proposals))
            proposals.append(Proposal(box=box, feature=feature))
            ground_truth.append((box, class_name))
        if use_background:
            bx, by, bw, bh = _BACKGROUND_ANCHOR
            bx = bx + rng.normal(0.0, cfg.jitter) * diagonal / width
            by = by + rng.normal(0.0, cfg.jitter) * diagonal / height
            box = _box_from_normalized(bx, by, bw, bh, width, height)
            feature = (
                cfg.background_strength * background_prototype
                + cfg.context_affinity * prototypes[c]
                + rng.normal(0.0, cfg.noise_sigma, d)
            )
            proposals.append(Proposal(box=box, feature=feature))
        while len(proposals) < cfg.proposals_per_image:
            cx, cy = rng.uniform(0.12, 0.88, size=2)
            w = float(np.exp(rng.uniform(np.log(0.08), np.log(0.45))))
            h = float(np.exp(rng.uniform(np.log(0.08), np.log(0.45))))
            box = _box_from_normalized(cx, cy, w, h, width, height)
            feature = rng.normal(0.0, cfg.noise_sigma, d)
            proposals.append(Proposal(box=box, feature=feature))

        image_id = f"synth-{i:0{id_width}d}"
        image_feature = image_prototypes[c] + rng.normal(0.0, 0.4, gdim)
        records.append(
            ImageRecord(
                image_id=image_id,
                width=float(width),
                height=float(height),
                proposals=tuple(proposals),
                image_feature=image_feature,
                ground_truth=tuple(ground_truth),
            )
        )
        truth.append(
            PlantedImage(
                image_id=image_id, class_name=class_name, planted=tuple(planted_indices)
            )
        )
    return records, PlantedTruth(images=tuple(truth))


def write_truth(path: Path | str, truth: PlantedTruth) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "images": [
            {"image_id": img.image_id, "class": img.class_name, "planted": list(img.planted)}
            for img in truth.images
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_truth(path: Path | str) -> PlantedTruth:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"missing planted-truth file: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if set(doc) != {"format_version", "images"} or doc["format_version"] != FORMAT_VERSION:
        raise FormatError(f"{path}: not a planted-truth document")
    images = []
    for img in doc["images"]:
        if set(img) != {"image_id", "class", "planted"}:
            raise FormatError(f"{path}: malformed planted-truth entry")
        images.append(
            PlantedImage(
                image_id=str(img["image_id"]),
                class_name=str(img["class"]),
                planted=tuple(int(k) for k in img["planted"]),
            )
        )
    return PlantedTruth(images=tuple(images))


def generate(cfg: SynthConfig, out_dir: Path | str) -> tuple[Path, Path]:
    """Write the dataset plus its planted-truth sidecar; returns both paths."""
    out_dir = Path(out_dir)
    records, truth = build_records(cfg)
    vocabulary = [f"class-{c}" for c in range(cfg.n_classes)]
    manifest_path = write_dataset(out_dir, records, class_vocabulary=vocabulary)
    truth_path = out_dir / "planted.json"
    write_truth(truth_path, truth)
    return manifest_path, truth_path
