"""Staged command-line pipeline.

Stages (``neighbors -> similarities -> rank -> select -> evaluate`` plus
``cluster``) each read the previous stage's files from the work directory
and are idempotent: a stage records a digest of its semantic configuration
and input payloads, and re-running with unchanged inputs is a logged no-op.
``pipeline`` chains everything; ``synth`` generates a planted dataset.

Exit codes by failure class: 0 success, 2 configuration, 3 missing input,
4 file format, 5 data validation, 6 solver convergence, 1 unexpected.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .category import (
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
    MissingInputError,
    RegionRankError,
)
from .graph import NeighborList, assemble, find_neighbors
from .metrics import compute_report, corret, pr_curve
from .model import validate_dataset
from .phm import HoughConfig, compute_blocks
from .ranking import RankingConfig, solve_lod, solve_pagerank, solve_quadratic
from .selection import SelectionConfig, select_all
from .storage import (
    FORMAT_VERSION,
    Dataset,
    load_dataset,
    read_block,
    read_ranks,
    read_result,
    write_block,
    write_ranks,
    write_result,
)
from .synth import SynthConfig, generate

log = logging.getLogger("regionrank")

STAGE_VERSIONS = {
    "neighbors": 1,
    "similarities": 1,
    "rank": 1,
    "select": 1,
    "evaluate": 1,
    "cluster": 1,
    "synth": 1,
}

SOLVER_NAMES = ("quadratic", "pagerank", "lod")

_EXIT_CODES = (
    (ConfigError, 2),
    (MissingInputError, 3),
    (FormatError, 4),
    (DataValidationError, 5),
    ((ConvergenceError, DanglingNodeError), 6),
    (RegionRankError, 1),
)


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class PipelineConfig:
    dataset: Path
    work_dir: Path
    k_neighbors: int = 100
    hough: HoughConfig = HoughConfig()
    ranking: RankingConfig = RankingConfig()
    selection: SelectionConfig = SelectionConfig()
    sigmas: tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
    m_values: tuple[int, ...] = (1, 5)
    workers: int = 1
    chunks: int = 1
    solver: str = "lod"

    def __post_init__(self):
        if self.solver not in SOLVER_NAMES:
            raise ConfigError(f"solver must be one of {SOLVER_NAMES}, got {self.solver!r}")
        if self.k_neighbors < 1:
            raise ConfigError(f"neighbors.k must be positive, got {self.k_neighbors}")
        if self.workers < 1 or self.chunks < 1:
            raise ConfigError("workers and chunks must be positive")
        if not self.m_values or any(m < 1 for m in self.m_values):
            raise ConfigError("eval.m_values must be positive integers")
        if not self.sigmas or any(not 0 < s <= 1 for s in self.sigmas):
            raise ConfigError("eval.sigmas must lie in (0, 1]")

    def semantic_digest(self) -> str:
        """Digest of everything that affects outputs (not workers/chunks:
        those are performance knobs under the determinism contract)."""
        doc = {
            "k": self.k_neighbors,
            "hough": [self.hough.translation_bins, self.hough.scale_bins,
                      list(self.hough.scale_range), self.hough.score_threshold],
            "ranking": [self.ranking.beta, self.ranking.gamma, self.ranking.alpha,
                        self.ranking.iterations, self.ranking.tolerance],
            "selection": [self.selection.iou_threshold, self.selection.max_per_image,
                          self.selection.use_groups],
            "eval": [list(self.sigmas), list(self.m_values)],
            "solver": self.solver,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


_TOP_KEYS = {
    "dataset", "work_dir", "neighbors", "hough", "ranking", "selection",
    "eval", "workers", "chunks", "solver",
}
_SECTION_KEYS = {
    "neighbors": {"k"},
    "hough": {"translation_bins", "scale_bins", "scale_range", "score_threshold"},
    "ranking": {"beta", "gamma", "alpha", "iterations", "tolerance"},
    "selection": {"max_per_image", "iou_threshold", "use_groups"},
    "eval": {"sigmas", "m_values"},
}


def _reject_unknown(doc: dict, allowed: set[str], where: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def load_config(path: Path | str | None, overrides: dict) -> PipelineConfig:
    """Merge (defaults <- config file <- command-line overrides)."""
    doc: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise MissingInputError(f"missing config file: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        _reject_unknown(doc, _TOP_KEYS, str(path))
        for section, keys in _SECTION_KEYS.items():
            if section in doc:
                _reject_unknown(doc[section], keys, f"{path}: {section}")
        base = path.parent

    def pick(section: str, key: str, flag: str, default):
        if overrides.get(flag) is not None:
            return overrides[flag]
        if section in doc and key in doc[section]:
            return doc[section][key]
        return default

    dataset = overrides.get("dataset") or doc.get("dataset")
    if dataset is None:
        raise ConfigError("no dataset given (flag --dataset or config key 'dataset')")
    dataset = Path(dataset)
    if not dataset.is_absolute():
        dataset = base / dataset

    work = overrides.get("work_dir") or doc.get("work_dir") or os.environ.get("REGIONRANK_WORK")
    if work is None:
        work = dataset.parent / "work"
    work = Path(work)
    if not work.is_absolute() and overrides.get("work_dir") is None and "work_dir" in doc:
        work = base / work

    try:
        hough = HoughConfig(
            translation_bins=int(pick("hough", "translation_bins", "translation_bins", 9)),
            scale_bins=int(pick("hough", "scale_bins", "scale_bins", 5)),
            scale_range=tuple(pick("hough", "scale_range", "scale_range", (0.25, 4.0))),
            score_threshold=float(pick("hough", "score_threshold", "score_threshold", 0.0)),
        )
        tolerance = pick("ranking", "tolerance", "tolerance", None)
        ranking = RankingConfig(
            beta=float(pick("ranking", "beta", "beta", 1e-4)),
            gamma=float(pick("ranking", "gamma", "gamma", 1e-4)),
            alpha=float(pick("ranking", "alpha", "alpha", 0.10)),
            iterations=int(pick("ranking", "iterations", "iterations", 50)),
            tolerance=None if tolerance is None else float(tolerance),
        )
        use_groups = pick("selection", "use_groups", "use_groups", None)
        selection = SelectionConfig(
            iou_threshold=float(pick("selection", "iou_threshold", "iou_threshold", 0.3)),
            max_per_image=int(pick("selection", "max_per_image", "max_per_image", 5)),
            use_groups=None if use_groups is None else bool(use_groups),
        )
        return PipelineConfig(
            dataset=dataset,
            work_dir=work,
            k_neighbors=int(pick("neighbors", "k", "k", 100)),
            hough=hough,
            ranking=ranking,
            selection=selection,
            sigmas=tuple(float(s) for s in pick("eval", "sigmas", "sigmas",
                                                PipelineConfig.sigmas)),
            m_values=tuple(int(m) for m in pick("eval", "m_values", "m_values", (1, 5))),
            workers=int(overrides.get("workers") or doc.get("workers") or 1),
            chunks=int(overrides.get("chunks") or doc.get("chunks") or 1),
            solver=str(overrides.get("solver") or doc.get("solver") or "lod"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration value: {exc}") from exc


# ---------------------------------------------------------------------------
# stage state and digests

def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_digest(stage: str, config_parts: list, input_files: list[Path]) -> str:
    h = hashlib.sha256()
    h.update(json.dumps([stage, STAGE_VERSIONS[stage], config_parts], sort_keys=True).encode())
    for path in input_files:
        h.update(path.name.encode())
        h.update(_sha256_file(path).encode())
    return h.hexdigest()


def _state_path(work: Path) -> Path:
    return work / "stages.json"


def _load_state(work: Path) -> dict:
    path = _state_path(work)
    if not path.is_file():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return {}


def _mark_done(work: Path, stage: str, digest: str) -> None:
    state = _load_state(work)
    state[stage] = {"digest": digest, "version": STAGE_VERSIONS[stage]}
    _state_path(work).write_text(json.dumps(state, indent=2) + "\n", encoding="utf-8")


def _up_to_date(work: Path, stage: str, digest: str, outputs: list[Path], force: bool) -> bool:
    if force:
        return False
    state = _load_state(work).get(stage)
    if not state or state.get("digest") != digest:
        return False
    return all(p.exists() for p in outputs)


def _write_run_manifest(cfg: PipelineConfig, command: str) -> str:
    cfg.work_dir.mkdir(parents=True, exist_ok=True)
    digest = cfg.semantic_digest()
    doc = {
        "package_version": __version__,
        "command": command,
        "config_digest": digest,
        "stage_versions": STAGE_VERSIONS,
    }
    (cfg.work_dir / "run.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return digest


# ---------------------------------------------------------------------------
# stage implementations

def _dataset_files(dataset: Dataset) -> list[Path]:
    files = [dataset.root / dataset.manifest.image_features_file]
    files += [dataset.root / e.file for e in dataset.manifest.entries]
    return files


def _validate_or_fail(dataset: Dataset) -> None:
    report = validate_dataset(dataset.manifest, dataset.validation_stream())
    if not report.ok:
        raise DataValidationError(str(report))


def _neighbors_path(cfg: PipelineConfig) -> Path:
    return cfg.work_dir / "neighbors.json"


def _write_neighbors(path: Path, neighbors: NeighborList, image_ids: list[str]) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "k": neighbors.k,
        "image_ids": image_ids,
        "neighbors": [[int(q) for q in ids] for ids in neighbors.neighbors],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _read_neighbors(path: Path, image_ids: list[str]) -> NeighborList:
    if not path.is_file():
        raise MissingInputError(f"missing neighbors file: {path} (run the neighbors stage)")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if set(doc) != {"format_version", "k", "image_ids", "neighbors"}:
        raise FormatError(f"{path}: not a neighbors document")
    if doc["format_version"] != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {doc['format_version']}")
    if doc["image_ids"] != image_ids:
        raise DataValidationError(f"{path}: image ids do not match the dataset")
    return NeighborList(
        neighbors=tuple(np.asarray(ids, dtype=np.int64) for ids in doc["neighbors"]),
        k=int(doc["k"]),
    )


def stage_neighbors(cfg: PipelineConfig, dataset: Dataset, force: bool) -> None:
    out = _neighbors_path(cfg)
    digest = _stage_digest(
        "neighbors", [cfg.k_neighbors],
        [cfg.dataset, dataset.root / dataset.manifest.image_features_file],
    )
    if _up_to_date(cfg.work_dir, "neighbors", digest, [out], force):
        log.info("neighbors: up to date, skipped")
        return
    start = time.perf_counter()
    neighbors = find_neighbors(np.asarray(dataset.image_features(), dtype=np.float64),
                               cfg.k_neighbors)
    _write_neighbors(out, neighbors, dataset.image_ids)
    _mark_done(cfg.work_dir, "neighbors", digest)
    log.info("neighbors: %d lists (k=%d) in %.2fs -> %s",
             len(dataset), cfg.k_neighbors, time.perf_counter() - start, out)


def _blocks_dir(cfg: PipelineConfig) -> Path:
    return cfg.work_dir / "blocks"


def _blocks_index_path(cfg: PipelineConfig) -> Path:
    return _blocks_dir(cfg) / "index.json"


def stage_similarities(cfg: PipelineConfig, dataset: Dataset, force: bool) -> None:
    neighbors = _read_neighbors(_neighbors_path(cfg), dataset.image_ids)
    pairs = neighbors.pairs()
    digest = _stage_digest(
        "similarities",
        [cfg.hough.translation_bins, cfg.hough.scale_bins, list(cfg.hough.scale_range),
         cfg.hough.score_threshold],
        _dataset_files(dataset) + [_neighbors_path(cfg)],
    )
    index_path = _blocks_index_path(cfg)
    if _up_to_date(cfg.work_dir, "similarities", digest, [index_path], force):
        log.info("similarities: up to date, skipped")
        return
    start = time.perf_counter()
    _blocks_dir(cfg).mkdir(parents=True, exist_ok=True)
    records = dataset.records()
    width = len(str(len(records) - 1)) if records else 1
    files = []
    # Batched so peak memory stays at one batch of blocks, not all of them.
    batch = 512
    for lo in range(0, len(pairs), batch):
        chunk = pairs[lo:lo + batch]
        blocks = compute_blocks(records, chunk, cfg.hough, workers=cfg.workers)
        for (p, q), block in zip(chunk, blocks):
            name = f"block_{p:0{width}d}_{q:0{width}d}.lodb"
            write_block(_blocks_dir(cfg) / name, block)
            files.append(name)
    index_path.write_text(
        json.dumps({"format_version": FORMAT_VERSION, "files": files}, indent=2) + "\n",
        encoding="utf-8",
    )
    _mark_done(cfg.work_dir, "similarities", digest)
    log.info("similarities: %d blocks in %.2fs -> %s",
             len(files), time.perf_counter() - start, _blocks_dir(cfg))


def _read_blocks_index(cfg: PipelineConfig) -> list[Path]:
    index_path = _blocks_index_path(cfg)
    if not index_path.is_file():
        raise MissingInputError(
            f"missing blocks index: {index_path} (run the similarities stage)"
        )
    try:
        doc = json.loads(index_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{index_path}: invalid JSON: {exc}") from exc
    if set(doc) != {"format_version", "files"} or doc["format_version"] != FORMAT_VERSION:
        raise FormatError(f"{index_path}: not a blocks index")
    return [_blocks_dir(cfg) / name for name in doc["files"]]


def _ranks_path(cfg: PipelineConfig) -> Path:
    return cfg.work_dir / f"ranks_{cfg.solver}.lodr"


def stage_rank(cfg: PipelineConfig, dataset: Dataset, force: bool) -> None:
    block_files = _read_blocks_index(cfg)
    digest = _stage_digest(
        "rank",
        [cfg.solver, cfg.ranking.beta, cfg.ranking.gamma, cfg.ranking.alpha,
         cfg.ranking.iterations, cfg.ranking.tolerance],
        [_blocks_index_path(cfg)] + block_files + [cfg.dataset],
    )
    out = _ranks_path(cfg)
    if _up_to_date(cfg.work_dir, "rank", digest, [out], force):
        log.info("rank: up to date, skipped")
        return
    start = time.perf_counter()
    neighbors = _read_neighbors(_neighbors_path(cfg), dataset.image_ids)
    blocks = [read_block(p) for p in block_files]
    layout = [(e.image_id, e.n_proposals) for e in dataset.manifest.entries]
    adjacency, degrees = assemble(
        blocks, layout, gamma=cfg.ranking.gamma, n_chunks=cfg.chunks, neighbors=neighbors
    )
    if cfg.solver == "quadratic":
        vector = solve_quadratic(adjacency, cfg.ranking, workers=cfg.workers).vector
    elif cfg.solver == "pagerank":
        vector = solve_pagerank(adjacency, degrees, config=cfg.ranking,
                                workers=cfg.workers).vector
    else:
        areas = _proposal_areas(dataset)
        vector = solve_lod(adjacency, degrees, areas, cfg.ranking, workers=cfg.workers).vector
    write_ranks(out, vector)
    _mark_done(cfg.work_dir, "rank", digest)
    log.info("rank: solver=%s over %d nodes in %.2fs -> %s",
             cfg.solver, adjacency.n_nodes, time.perf_counter() - start, out)


def _proposal_areas(dataset: Dataset) -> np.ndarray:
    areas = []
    for record in dataset:
        areas.extend(p.box.area for p in record.proposals)
    return np.asarray(areas, dtype=np.float64)


def _result_path(cfg: PipelineConfig) -> Path:
    return cfg.work_dir / f"result_{cfg.solver}.json"


def stage_select(cfg: PipelineConfig, dataset: Dataset, force: bool) -> None:
    ranks_path = _ranks_path(cfg)
    if not ranks_path.is_file():
        raise MissingInputError(f"missing rank file: {ranks_path} (run the rank stage)")
    digest = _stage_digest(
        "select",
        [cfg.selection.iou_threshold, cfg.selection.max_per_image, cfg.selection.use_groups],
        [ranks_path, cfg.dataset],
    )
    out = _result_path(cfg)
    if _up_to_date(cfg.work_dir, "select", digest, [out], force):
        log.info("select: up to date, skipped")
        return
    start = time.perf_counter()
    ranks = read_ranks(ranks_path)
    records = dataset.records()
    result = select_all(records, ranks.values, cfg.selection)
    write_result(out, result)
    _mark_done(cfg.work_dir, "select", digest)
    total = sum(sel.n_regions for sel in result.images)
    log.info("select: %d regions over %d images in %.2fs -> %s",
             total, len(records), time.perf_counter() - start, out)


def stage_evaluate(cfg: PipelineConfig, dataset: Dataset, force: bool,
                   digest_hex: str) -> None:
    result_path = _result_path(cfg)
    if not result_path.is_file():
        raise MissingInputError(f"missing result file: {result_path} (run the select stage)")
    digest = _stage_digest(
        "evaluate",
        [list(cfg.sigmas), list(cfg.m_values)],
        [result_path, cfg.dataset],
    )
    report_txt = cfg.work_dir / f"report_{cfg.solver}.txt"
    report_csv = cfg.work_dir / f"report_{cfg.solver}.csv"
    curve_csv = cfg.work_dir / f"pr_curve_{cfg.solver}.csv"
    outputs = [report_txt, report_csv, curve_csv]
    if _up_to_date(cfg.work_dir, "evaluate", digest, outputs, force):
        log.info("evaluate: up to date, skipped")
        for line in report_txt.read_text(encoding="utf-8").splitlines():
            print(line)
        return
    start = time.perf_counter()
    result = read_result(result_path)
    records = dataset.records()
    report = compute_report(
        result, records, max_regions=cfg.selection.max_per_image,
        detrate_at=cfg.m_values, per_class=True,
    )
    lines = [f"solver: {cfg.solver}", f"config digest: {digest_hex}"] + report.lines()
    report_txt.write_text("\n".join(lines) + "\n", encoding="utf-8")
    report_csv.write_text(
        report.csv_header() + ",config_digest\n" + report.csv_row() + f",{digest_hex}\n",
        encoding="utf-8",
    )
    curve_rows = ["sigma,m,precision,recall"]
    for sigma in cfg.sigmas:
        for m, p, r in pr_curve(result, records, sigma, cfg.selection.max_per_image):
            curve_rows.append(f"{sigma:.2f},{m},{p:.9f},{r:.9f}")
    curve_csv.write_text("\n".join(curve_rows) + "\n", encoding="utf-8")
    _mark_done(cfg.work_dir, "evaluate", digest)
    log.info("evaluate: report in %.2fs -> %s", time.perf_counter() - start, report_txt)
    for line in lines:
        print(line)


def stage_cluster(cfg: PipelineConfig, dataset: Dataset, force: bool,
                  n_clusters: int | None, cluster_seed: int, retrieval_k: int) -> None:
    result_path = _result_path(cfg)
    if not result_path.is_file():
        raise MissingInputError(f"missing result file: {result_path} (run the select stage)")
    vocabulary = dataset.manifest.class_vocabulary
    if n_clusters is None:
        if not vocabulary:
            raise ConfigError(
                "no --clusters given and the manifest has no class vocabulary"
            )
        n_clusters = len(vocabulary)
    digest = _stage_digest(
        "cluster", [n_clusters, cluster_seed, retrieval_k],
        [result_path, cfg.dataset],
    )
    assign_csv = cfg.work_dir / f"cluster_assignments_{cfg.solver}.csv"
    hist_csv = cfg.work_dir / f"cluster_histograms_{cfg.solver}.csv"
    confusion_csv = cfg.work_dir / f"cluster_confusion_{cfg.solver}.csv"
    summary_txt = cfg.work_dir / f"cluster_summary_{cfg.solver}.txt"
    outputs = [assign_csv, hist_csv, confusion_csv, summary_txt]
    if _up_to_date(cfg.work_dir, "cluster", digest, outputs, force):
        log.info("cluster: up to date, skipped")
        for line in summary_txt.read_text(encoding="utf-8").splitlines():
            print(line)
        return
    start = time.perf_counter()
    result = read_result(result_path)
    records = dataset.records()
    features = selected_features(result, records)
    clustering = kmeans(features, n_clusters, seed=cluster_seed)

    label_sets = [frozenset(label for _, label in r.ground_truth) for r in records]
    classes = tuple(vocabulary) if vocabulary else tuple(
        sorted({label for s in label_sets for label in s})
    )

    assign_rows = ["image_id,cluster"]
    assign_rows += [f"{r.image_id},{int(c)}"
                    for r, c in zip(records, clustering.assignments)]
    assign_csv.write_text("\n".join(assign_rows) + "\n", encoding="utf-8")

    summary = [f"solver: {cfg.solver}", f"clusters: {n_clusters}",
               f"objective: {clustering.objective:.6f}"]
    if classes:
        hist = cluster_histograms(clustering, label_sets, classes)
        hist_rows = ["cluster,class,score"]
        for c in range(hist.n_clusters):
            for j, name in enumerate(hist.classes):
                hist_rows.append(f"{c},{name},{hist.scores[c, j]:.9f}")
        hist_csv.write_text("\n".join(hist_rows) + "\n", encoding="utf-8")

        confusion_rows = ["cluster," + ",".join(classes)]
        for c in range(clustering.k):
            counts = {name: 0 for name in classes}
            for i in clustering.members(c):
                for label in label_sets[int(i)]:
                    counts[label] += 1
            confusion_rows.append(
                str(c) + "," + ",".join(str(counts[name]) for name in classes)
            )
        confusion_csv.write_text("\n".join(confusion_rows) + "\n", encoding="utf-8")

        for cluster_id, class_name in match_clusters(hist):
            summary.append(f"match: cluster {cluster_id} -> {class_name}")
        if all(len(s) == 1 for s in label_sets):
            labels = [next(iter(s)) for s in label_sets]
            summary.append(f"purity: {purity(clustering, labels):.2f}")
        if len(records) > retrieval_k:
            sim = image_similarity(result, records)
            retrieved = retrieve_neighbors(sim, k=retrieval_k)
            summary.append(f"corret@k={retrieval_k}: {corret(retrieved, label_sets):.2f}")
    else:
        hist_csv.write_text("cluster,class,score\n", encoding="utf-8")
        confusion_csv.write_text("cluster\n", encoding="utf-8")
        summary.append("no ground-truth classes: histogram and purity skipped")
    summary_txt.write_text("\n".join(summary) + "\n", encoding="utf-8")
    _mark_done(cfg.work_dir, "cluster", digest)
    log.info("cluster: %d clusters in %.2fs -> %s",
             n_clusters, time.perf_counter() - start, summary_txt)
    for line in summary:
        print(line)


# ---------------------------------------------------------------------------
# commands

def _prepare(args, command: str) -> tuple[PipelineConfig, Dataset, str]:
    overrides = {
        key: getattr(args, key, None)
        for key in (
            "dataset", "work_dir", "solver", "workers", "chunks", "k", "beta", "gamma",
            "alpha", "iterations", "tolerance", "iou_threshold", "max_per_image",
            "translation_bins", "scale_bins", "score_threshold",
        )
    }
    if getattr(args, "use_groups", None) is not None:
        overrides["use_groups"] = {"auto": None, "on": True, "off": False}[args.use_groups]
    cfg = load_config(getattr(args, "config", None), overrides)
    dataset = load_dataset(cfg.dataset)
    _validate_or_fail(dataset)
    digest = _write_run_manifest(cfg, command)
    return cfg, dataset, digest


def cmd_neighbors(args) -> int:
    cfg, dataset, _ = _prepare(args, "neighbors")
    stage_neighbors(cfg, dataset, args.force)
    return 0


def cmd_similarities(args) -> int:
    cfg, dataset, _ = _prepare(args, "similarities")
    stage_similarities(cfg, dataset, args.force)
    return 0


def cmd_rank(args) -> int:
    cfg, dataset, _ = _prepare(args, "rank")
    stage_rank(cfg, dataset, args.force)
    return 0


def cmd_select(args) -> int:
    cfg, dataset, _ = _prepare(args, "select")
    stage_select(cfg, dataset, args.force)
    return 0


def cmd_evaluate(args) -> int:
    cfg, dataset, digest = _prepare(args, "evaluate")
    stage_evaluate(cfg, dataset, args.force, digest)
    return 0


def cmd_cluster(args) -> int:
    cfg, dataset, _ = _prepare(args, "cluster")
    stage_cluster(cfg, dataset, args.force, args.clusters, args.cluster_seed,
                  args.retrieval_k)
    return 0


def cmd_pipeline(args) -> int:
    cfg, dataset, digest = _prepare(args, "pipeline")
    stage_neighbors(cfg, dataset, args.force)
    stage_similarities(cfg, dataset, args.force)
    stage_rank(cfg, dataset, args.force)
    stage_select(cfg, dataset, args.force)
    if any(r.ground_truth for r in dataset.manifest.entries):
        stage_evaluate(cfg, dataset, args.force, digest)
        if dataset.manifest.class_vocabulary:
            stage_cluster(cfg, dataset, args.force, None, 0, min(10, len(dataset) - 1))
    else:
        log.info("evaluate: no ground truth in the dataset, skipped")
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        seed=args.seed,
        n_images=args.images,
        proposals_per_image=args.proposals,
        feature_dim=args.feature_dim,
        n_classes=args.classes,
        signal_strength=args.signal,
        strength_spread=args.spread,
        noise_sigma=args.noise,
        planted_per_image=args.planted,
        jitter=args.jitter,
        background_strength=args.background,
        context_affinity=args.context,
    )
    out = Path(args.out)
    digest = hashlib.sha256(
        json.dumps([STAGE_VERSIONS["synth"], dataclasses.asdict(cfg)],
                   sort_keys=True).encode()
    ).hexdigest()
    state_file = out / "synth-state.json"
    manifest = out / "manifest.json"
    if not args.force and state_file.is_file() and manifest.is_file():
        try:
            if json.loads(state_file.read_text())["digest"] == digest:
                log.info("synth: up to date, skipped")
                return 0
        except (json.JSONDecodeError, KeyError):
            pass
    start = time.perf_counter()
    manifest_path, truth_path = generate(cfg, out)
    state_file.write_text(json.dumps({"digest": digest}, indent=2) + "\n", encoding="utf-8")
    log.info("synth: %d images in %.2fs -> %s (+ %s)",
             cfg.n_images, time.perf_counter() - start, manifest_path, truth_path)
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_shared(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="pipeline config JSON")
    parser.add_argument("--dataset", type=Path, help="dataset manifest path")
    parser.add_argument("--work-dir", dest="work_dir", type=Path,
                        help="stage output directory (env REGIONRANK_WORK)")
    parser.add_argument("--solver", choices=SOLVER_NAMES, help="ranking solver")
    parser.add_argument("--workers", type=int, help="parallel workers")
    parser.add_argument("--chunks", type=int, help="adjacency row chunks")
    parser.add_argument("--k", type=int, help="image neighbors per image")
    parser.add_argument("--beta", type=float, help="restart probability")
    parser.add_argument("--gamma", type=float, help="irreducibility term weight")
    parser.add_argument("--alpha", type=float, help="personalization fraction")
    parser.add_argument("--iterations", type=int, help="power iterations")
    parser.add_argument("--tolerance", type=float, help="early-stop tolerance")
    parser.add_argument("--iou-threshold", dest="iou_threshold", type=float,
                        help="selection overlap limit")
    parser.add_argument("--max-per-image", dest="max_per_image", type=int,
                        help="selection budget M")
    parser.add_argument("--use-groups", dest="use_groups", choices=("auto", "on", "off"),
                        help="group constraint mode")
    parser.add_argument("--translation-bins", dest="translation_bins", type=int,
                        help="Hough translation bins per axis (odd)")
    parser.add_argument("--scale-bins", dest="scale_bins", type=int,
                        help="Hough scale bins (odd)")
    parser.add_argument("--score-threshold", dest="score_threshold", type=float,
                        help="similarity sparsification threshold")
    parser.add_argument("--force", action="store_true", help="re-run even if up to date")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regionrank",
        description="Graph-ranking object discovery over region proposals.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, handler, doc in (
        ("neighbors", cmd_neighbors, "find nearest-neighbor images"),
        ("similarities", cmd_similarities, "compute similarity blocks for linked pairs"),
        ("rank", cmd_rank, "solve node ranks over the proposal graph"),
        ("select", cmd_select, "select regions from the rank vector"),
        ("evaluate", cmd_evaluate, "score the discovery result against ground truth"),
        ("pipeline", cmd_pipeline, "run every stage in order"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_shared(p)
        p.set_defaults(handler=handler)

    p = sub.add_parser("cluster", help="category discovery over selected regions")
    _add_shared(p)
    p.add_argument("--clusters", type=int, help="cluster count (default: class count)")
    p.add_argument("--cluster-seed", dest="cluster_seed", type=int, default=0)
    p.add_argument("--retrieval-k", dest="retrieval_k", type=int, default=10)
    p.set_defaults(handler=cmd_cluster)

    p = sub.add_parser("synth", help="generate a planted synthetic dataset")
    p.add_argument("--out", type=Path, required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--images", type=int, default=200)
    p.add_argument("--proposals", type=int, default=20)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--feature-dim", dest="feature_dim", type=int, default=32)
    p.add_argument("--signal", type=float, default=5.75)
    p.add_argument("--spread", type=float, default=0.1)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--planted", type=int, default=1)
    p.add_argument("--jitter", type=float, default=0.02)
    p.add_argument("--background", type=float, default=3.0)
    p.add_argument("--context", type=float, default=3.0)
    p.add_argument("--force", action="store_true", help="regenerate even if up to date")
    p.set_defaults(handler=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except RegionRankError as exc:
        for klass, code in _EXIT_CODES:
            if isinstance(exc, klass):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
