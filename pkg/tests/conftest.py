"""Shared builders for the test suite.

Most tests operate on tiny hand-built image records; these helpers keep the
geometry and feature plumbing out of the test bodies.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from regionrank import (
    BoundingBox,
    ImageRecord,
    Proposal,
    SynthConfig,
    generate,
)


def box(x0: float, y0: float, x1: float, y1: float) -> BoundingBox:
    return BoundingBox(x0, y0, x1, y1)


def make_record(
    image_id: str,
    features: np.ndarray,
    boxes: list[tuple[float, float, float, float]] | None = None,
    width: float = 100.0,
    height: float = 100.0,
    groups: list[int] | None = None,
    image_feature: np.ndarray | None = None,
    ground_truth: tuple = (),
) -> ImageRecord:
    """Build an image record from a feature matrix and optional geometry.

    Default boxes are disjoint 10x10 tiles along the diagonal, so selection
    constraints never bind unless a test asks for overlap explicitly.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float32))
    r = features.shape[0]
    if boxes is None:
        boxes = [(2.0 + 11.0 * i, 2.0 + 11.0 * i, 10.0 + 11.0 * i, 10.0 + 11.0 * i)
                 for i in range(r)]
    if groups is None:
        groups = [0] * r
    proposals = tuple(
        Proposal(box=BoundingBox(*boxes[i]), feature=features[i], group_id=groups[i])
        for i in range(r)
    )
    if image_feature is None:
        image_feature = features.mean(axis=0)
    return ImageRecord(
        image_id=image_id,
        width=width,
        height=height,
        proposals=proposals,
        image_feature=np.asarray(image_feature, dtype=np.float32),
        ground_truth=ground_truth,
    )


def random_records(
    rng: np.random.Generator,
    n_images: int,
    dim: int = 6,
    min_proposals: int = 1,
    max_proposals: int = 5,
) -> list[ImageRecord]:
    """Random small records with nonnegative features (nonnegative blocks)."""
    records = []
    for p in range(n_images):
        r = int(rng.integers(min_proposals, max_proposals + 1))
        feats = rng.random((r, dim)).astype(np.float32)
        records.append(
            make_record(f"img_{p:03d}", feats, image_feature=rng.random(4))
        )
    return records


@pytest.fixture(scope="session")
def micro_synth(tmp_path_factory) -> tuple[Path, Path]:
    """A small generated dataset reused by CLI and integration tests.

    Returns (manifest path, truth path).  Session-scoped: every consumer
    treats the directory as read-only.
    """
    out = tmp_path_factory.mktemp("micro-synth")
    cfg = SynthConfig(n_images=24, proposals_per_image=6, n_classes=3, seed=11)
    return generate(cfg, out)
