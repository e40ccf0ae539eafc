"""Unsupervised object discovery by ranking region proposals on a match graph.

The pipeline links each image to its nearest neighbors by global descriptor,
scores proposal pairs across linked images with a geometry-consistent match
kernel, assembles the scores into one large symmetric adjacency, ranks every
proposal by a stationary eigenvector or a personalized random walk, and keeps
the best non-overlapping regions per image.  A small synthetic-data generator
and retrieval/clustering utilities round out the package.

Typical use::

    from regionrank import ProposalGraphRanker, SynthConfig, generate, load_dataset

    manifest, _ = generate(SynthConfig(), "data/")
    ranker = ProposalGraphRanker(solver="lod").fit(load_dataset(manifest))
    result = ranker.predict()
"""

from .category import (
    Clustering,
    ClusterHistograms,
    ImageSimilarityMatrix,
    cluster_histograms,
    image_similarity,
    kmeans,
    match_clusters,
    purity,
    retrieve_neighbors,
    selected_features,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DanglingNodeError,
    DataValidationError,
    FormatError,
    GeometryError,
    MissingInputError,
    RegionRankError,
)
from .estimators import ProposalGraphRanker, RegionClusterer
from .graph import (
    BlockAdjacency,
    NeighborList,
    assemble,
    find_neighbors,
    matvec,
    transition_matvec,
)
from .metrics import (
    SIGMA_GRID,
    MetricReport,
    ap_range,
    average_precision,
    compute_report,
    corloc,
    corret,
    det_rate,
    pr_curve,
    precision_recall_at,
)
from .model import (
    BoundingBox,
    DatasetManifest,
    ImageRecord,
    ManifestEntry,
    NodeIndex,
    Proposal,
    ValidationReport,
    Violation,
    iou,
    validate_dataset,
)
from .phm import (
    HoughConfig,
    SimilarityBlock,
    appearance_matrix,
    compute_blocks,
    phm_block,
    transformation_bin,
    transformation_bins,
)
from .ranking import (
    LodResult,
    PageRankResult,
    PersonalizationVector,
    QuadraticResult,
    RankingConfig,
    RankVector,
    build_personalization,
    solve_lod,
    solve_pagerank,
    solve_quadratic,
    uniform_personalization,
)
from .selection import (
    DiscoveryResult,
    ImageSelection,
    SelectedRegion,
    SelectionConfig,
    select_all,
    select_regions,
    single_object_view,
)
from .storage import (
    Dataset,
    load_dataset,
    read_block,
    read_image_features,
    read_manifest,
    read_proposals,
    read_ranks,
    read_result,
    write_block,
    write_dataset,
    write_image_features,
    write_manifest,
    write_proposals,
    write_ranks,
    write_result,
)
from .synth import PlantedTruth, SynthConfig, generate, read_truth, write_truth

__version__ = "0.1.0"

__all__ = [
    "BlockAdjacency",
    "BoundingBox",
    "ClusterHistograms",
    "Clustering",
    "ConfigError",
    "ConvergenceError",
    "DanglingNodeError",
    "DataValidationError",
    "Dataset",
    "DatasetManifest",
    "DiscoveryResult",
    "FormatError",
    "GeometryError",
    "HoughConfig",
    "ImageRecord",
    "ImageSelection",
    "ImageSimilarityMatrix",
    "LodResult",
    "ManifestEntry",
    "MetricReport",
    "MissingInputError",
    "NeighborList",
    "NodeIndex",
    "PageRankResult",
    "PersonalizationVector",
    "PlantedTruth",
    "Proposal",
    "ProposalGraphRanker",
    "QuadraticResult",
    "RankVector",
    "RankingConfig",
    "RegionClusterer",
    "RegionRankError",
    "SIGMA_GRID",
    "SelectedRegion",
    "SelectionConfig",
    "SimilarityBlock",
    "SynthConfig",
    "ValidationReport",
    "Violation",
    "ap_range",
    "appearance_matrix",
    "assemble",
    "average_precision",
    "build_personalization",
    "cluster_histograms",
    "compute_blocks",
    "compute_report",
    "corloc",
    "corret",
    "det_rate",
    "find_neighbors",
    "generate",
    "image_similarity",
    "iou",
    "kmeans",
    "load_dataset",
    "match_clusters",
    "matvec",
    "phm_block",
    "pr_curve",
    "precision_recall_at",
    "purity",
    "read_block",
    "read_image_features",
    "read_manifest",
    "read_proposals",
    "read_ranks",
    "read_result",
    "read_truth",
    "retrieve_neighbors",
    "select_all",
    "select_regions",
    "selected_features",
    "single_object_view",
    "solve_lod",
    "solve_pagerank",
    "solve_quadratic",
    "transformation_bin",
    "transformation_bins",
    "transition_matvec",
    "uniform_personalization",
    "validate_dataset",
    "write_block",
    "write_dataset",
    "write_image_features",
    "write_manifest",
    "write_proposals",
    "write_ranks",
    "write_result",
    "__version__",
]
