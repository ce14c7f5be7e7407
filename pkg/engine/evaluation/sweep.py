"""
Sweep harness: AUROC over a grid of (cluster source, metric, K, threshold mode).

Each cell builds clusters on the training split, fits a scoring model,
scores test-ID and every OOD set, and reports one AUROC per OOD set.
Cells that hit a precondition failure become rows carrying the reason.
Clusterings are shared between cells that only differ by metric or mode,
and a GMM fit starts from the k-means clustering of the same K;
cells run on a thread pool and rows come back sorted by grid key, so the
report does not depend on the thread count.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from engine.clustering.assignment import ClusterAssignment, ClusterSource, from_labels, single_cluster
from engine.clustering.gmm import GmmModel, gmm_fit
from engine.clustering.kmeans import kmeans_fit
from engine.errors import DataError, OodError, UsageError
from engine.evaluation.roc import auroc_from_arrays
from engine.geometry.distances import DistanceMetric
from engine.scoring.cluster_scoring import ThresholdMode, fit, score_many
from engine.store.embedding_store import EmbeddingSet, prepare

logger = logging.getLogger(__name__)

DEFAULT_K_VALUES = (5, 10, 15, 20)
SOURCE_ORDER = [ClusterSource.GROUND_TRUTH, ClusterSource.SINGLE, ClusterSource.KMEANS, ClusterSource.GMM]
METRIC_ORDER = [DistanceMetric.COSINE, DistanceMetric.EUCLIDEAN, DistanceMetric.MAHALANOBIS]
MODE_ORDER = [ThresholdMode.CLUSTER, ThresholdMode.GLOBAL, ThresholdMode.GMM_DEFAULT]


@dataclass(frozen=True)
class GridCell:
    """One sweep configuration. k is None for ground-truth clusters (K = GT)."""

    cluster_source: ClusterSource
    metric: DistanceMetric
    k: Optional[int]
    threshold_mode: ThresholdMode

    def __post_init__(self):
        source = ClusterSource.parse(self.cluster_source)
        metric = DistanceMetric.parse(self.metric)
        mode = ThresholdMode.parse(self.threshold_mode)
        k = self.k
        if source is ClusterSource.GROUND_TRUTH and k is not None:
            raise UsageError("ground-truth cells take K=gt", "evaluation")
        if source is ClusterSource.SINGLE and k != 1:
            raise UsageError("single-cluster cells take K=1", "evaluation")
        if source in (ClusterSource.KMEANS, ClusterSource.GMM) and (k is None or k < 1):
            raise UsageError(f"{source.value} cells need an integer K >= 1", "evaluation")
        if mode is ThresholdMode.GMM_DEFAULT and source is not ClusterSource.GMM:
            raise UsageError("gmm_default cells need cluster source gmm", "evaluation")
        object.__setattr__(self, "cluster_source", source)
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "threshold_mode", mode)

    @classmethod
    def parse(cls, text: str) -> "GridCell":
        """Parse `source:metric:K:mode`, K an integer or `gt`."""
        parts = [p.strip() for p in text.split(":")]
        if len(parts) != 4:
            raise UsageError(f"grid cell '{text}' must look like source:metric:K:mode", "evaluation")
        source, metric, k_text, mode = parts
        if k_text.lower() == "gt":
            k = None
        else:
            try:
                k = int(k_text)
            except ValueError:
                raise UsageError(f"grid cell '{text}': K must be an integer or 'gt'", "evaluation")
        return cls(ClusterSource.parse(source), DistanceMetric.parse(metric), k, ThresholdMode.parse(mode))

    @property
    def k_text(self) -> str:
        return "gt" if self.k is None else str(self.k)

    @property
    def sort_key(self) -> Tuple[int, int, int, int]:
        return (
            SOURCE_ORDER.index(self.cluster_source),
            METRIC_ORDER.index(self.metric),
            -1 if self.k is None else self.k,
            MODE_ORDER.index(self.threshold_mode),
        )

    def __str__(self) -> str:
        return f"{self.cluster_source.value}:{self.metric.value}:{self.k_text}:{self.threshold_mode.value}"


@dataclass(frozen=True)
class SweepRow:
    cluster_source: str
    metric: str
    k: str
    threshold_mode: str
    ood_set: str
    auroc: Optional[float]
    n_id: int
    n_ood: int
    error: str = ""


@dataclass(frozen=True)
class SweepReport:
    rows: Tuple[SweepRow, ...]

    @property
    def error_rows(self) -> List[SweepRow]:
        return [row for row in self.rows if row.error]

    def lookup(self, cell: Union[str, GridCell], ood_set: str = "ood") -> SweepRow:
        cell = GridCell.parse(cell) if isinstance(cell, str) else cell
        for row in self.rows:
            if (row.cluster_source, row.metric, row.k, row.threshold_mode, row.ood_set) == (
                cell.cluster_source.value, cell.metric.value, cell.k_text, cell.threshold_mode.value, ood_set,
            ):
                return row
        raise KeyError(f"{cell} / {ood_set}")


@dataclass(frozen=True)
class SweepConfig:
    seed: int = 0
    kmeans_max_iter: int = 300
    gmm_max_iter: int = 200
    tol: float = 1e-6
    n_init: int = 4
    normalize_for_cosine: bool = True
    normalize_for_distance: bool = False
    threads: int = 1

    def normalize_for(self, metric: DistanceMetric) -> bool:
        return self.normalize_for_cosine if metric is DistanceMetric.COSINE else self.normalize_for_distance


def default_grid(has_labels: bool, k_values: Iterable[int] = DEFAULT_K_VALUES, gt_clusters: Optional[int] = None) -> List[GridCell]:
    """
    GT (when labelled), single, k-means and GMM cells over every metric.

    k-means / GMM use k_values plus the ground-truth class count when known;
    GMM cells add the gmm_default mode.
    """
    ks = sorted(set(int(k) for k in k_values) | ({gt_clusters} if gt_clusters else set()))
    pair_modes = (ThresholdMode.CLUSTER, ThresholdMode.GLOBAL)
    cells: List[GridCell] = []
    for metric in METRIC_ORDER:
        if has_labels:
            cells += [GridCell(ClusterSource.GROUND_TRUTH, metric, None, mode) for mode in pair_modes]
        cells += [GridCell(ClusterSource.SINGLE, metric, 1, mode) for mode in pair_modes]
        for k in ks:
            cells += [GridCell(ClusterSource.KMEANS, metric, k, mode) for mode in pair_modes]
            cells += [GridCell(ClusterSource.GMM, metric, k, mode) for mode in MODE_ORDER]
    return sorted(cells, key=lambda cell: cell.sort_key)


def parse_grid(specs: Sequence[str]) -> List[GridCell]:
    cells = {str(cell): cell for cell in (GridCell.parse(spec) for spec in specs)}
    return sorted(cells.values(), key=lambda cell: cell.sort_key)


ClusteringKey = Tuple[ClusterSource, Optional[int], bool]


def _key_order(key: ClusteringKey) -> Tuple[int, int, bool]:
    return SOURCE_ORDER.index(key[0]), -1 if key[1] is None else key[1], key[2]


@dataclass
class _Clustering:
    clusters: Optional[ClusterAssignment] = None
    gmm: Optional[GmmModel] = None
    error: str = ""


@dataclass
class _Prepared:
    sets: Dict[str, EmbeddingSet] = field(default_factory=dict)
    error: str = ""


def _prepare_all(train, test_id, ood_sets, normalize: bool) -> _Prepared:
    try:
        sets = {"train": prepare(train, normalize), "test_id": prepare(test_id, normalize)}
        for name, ood in ood_sets.items():
            sets[f"ood:{name}"] = prepare(ood, normalize)
        return _Prepared(sets=sets)
    except OodError as e:
        return _Prepared(error=str(e))


def build_clusters(
    train: EmbeddingSet,
    source: ClusterSource,
    k: Optional[int],
    config: SweepConfig,
    init: Optional[ClusterAssignment] = None,
) -> Tuple[ClusterAssignment, Optional[GmmModel]]:
    """Clusters of the training split for one grid source. GMM starts from `init`, or from k-means run here."""
    if source is ClusterSource.GROUND_TRUTH:
        return from_labels(train), None
    if source is ClusterSource.SINGLE:
        return single_cluster(train), None
    if source is ClusterSource.KMEANS or init is None:
        _, clusters = kmeans_fit(train, k, seed=config.seed, max_iter=config.kmeans_max_iter, tol=config.tol, n_init=config.n_init)
        if source is ClusterSource.KMEANS:
            return clusters, None
        init = clusters
    gmm, clusters = gmm_fit(train, k, seed=config.seed, max_iter=config.gmm_max_iter, tol=config.tol, n_init=config.n_init, init=init)
    return clusters, gmm


def _cluster_task(
    prepared: Dict[bool, _Prepared],
    key: ClusteringKey,
    config: SweepConfig,
    init: Optional[_Clustering] = None,
) -> _Clustering:
    source, k, normalize = key
    if prepared[normalize].error:
        return _Clustering(error=prepared[normalize].error)
    if init is not None and init.error:
        return _Clustering(error=init.error)
    try:
        start = init.clusters if init is not None else None
        clusters, gmm = build_clusters(prepared[normalize].sets["train"], source, k, config, init=start)
        return _Clustering(clusters=clusters, gmm=gmm)
    except OodError as e:
        return _Clustering(error=str(e))


def _cell_group_task(
    cells: List[GridCell],
    prepared: _Prepared,
    clustering: _Clustering,
    ood_names: List[str],
) -> List[SweepRow]:
    """Fit one scoring model and evaluate every threshold mode of the group."""
    n_id = prepared.sets["test_id"].size if not prepared.error else 0
    n_oods = {name: prepared.sets[f"ood:{name}"].size if not prepared.error else 0 for name in ood_names}

    def error_rows(cell: GridCell, reason: str) -> List[SweepRow]:
        return [
            SweepRow(cell.cluster_source.value, cell.metric.value, cell.k_text, cell.threshold_mode.value,
                     name, None, n_id, n_oods[name], reason)
            for name in ood_names
        ]

    if clustering.error:
        return [row for cell in cells for row in error_rows(cell, clustering.error)]

    metric = cells[0].metric
    try:
        model = fit(prepared.sets["train"], clustering.clusters, metric, gmm=clustering.gmm)
    except OodError as e:
        return [row for cell in cells for row in error_rows(cell, str(e))]

    rows: List[SweepRow] = []
    for cell in cells:
        try:
            _, _, id_values = score_many(model, prepared.sets["test_id"], cell.threshold_mode)
            for name in ood_names:
                _, _, ood_values = score_many(model, prepared.sets[f"ood:{name}"], cell.threshold_mode)
                is_id = np.concatenate([np.ones(id_values.size, dtype=bool), np.zeros(ood_values.size, dtype=bool)])
                value = auroc_from_arrays(np.concatenate([id_values, ood_values]), is_id)
                rows.append(SweepRow(cell.cluster_source.value, cell.metric.value, cell.k_text, cell.threshold_mode.value,
                                     name, value, n_id, n_oods[name]))
        except OodError as e:
            rows.extend(error_rows(cell, str(e)))
    return rows


def run_sweep(
    train: EmbeddingSet,
    test_id: EmbeddingSet,
    ood: Union[EmbeddingSet, Mapping[str, EmbeddingSet]],
    grid: Sequence[GridCell],
    config: SweepConfig = SweepConfig(),
) -> SweepReport:
    """
    Evaluate every grid cell.

    Args:
        train: Training split (labels needed for gt cells)
        test_id: In-distribution test split
        ood: One OOD set or a mapping of OOD set name -> set
        grid: Cells to evaluate
        config: Seeds, iteration caps, normalization flags, thread count

    Returns:
        SweepReport, one row per (cell, OOD set), sorted by grid key
    """
    ood_sets = {ood.name: ood} if isinstance(ood, EmbeddingSet) else dict(ood)
    if not ood_sets:
        raise DataError("the sweep needs at least one OOD set", "evaluation")
    dimensions = {train.dimension, test_id.dimension} | {s.dimension for s in ood_sets.values()}
    if len(dimensions) != 1:
        raise DataError(f"train / test_id / ood dimensions differ: {sorted(dimensions)}", "evaluation")

    cells = sorted({str(cell): cell for cell in grid}.values(), key=lambda cell: cell.sort_key)
    ood_names = sorted(ood_sets)
    threads = max(1, config.threads)

    flags = sorted({config.normalize_for(cell.metric) for cell in cells})
    prepared = {flag: _prepare_all(train, test_id, ood_sets, flag) for flag in flags}

    keys: List[ClusteringKey] = sorted(
        {(cell.cluster_source, cell.k, config.normalize_for(cell.metric)) for cell in cells},
        key=_key_order,
    )

    groups: Dict[Tuple[ClusteringKey, DistanceMetric], List[GridCell]] = {}
    for cell in cells:
        key = (cell.cluster_source, cell.k, config.normalize_for(cell.metric))
        groups.setdefault((key, cell.metric), []).append(cell)
    group_keys = list(groups)

    logger.info("sweep: %d cells, %d clusterings, %d OOD sets, %d threads", len(cells), len(keys), len(ood_names), threads)
    with ThreadPoolExecutor(max_workers=threads) as executor:
        # GMM clusterings start from the k-means clustering of the same K and representation
        first = sorted(
            {key for key in keys if key[0] is not ClusterSource.GMM}
            | {(ClusterSource.KMEANS, key[1], key[2]) for key in keys if key[0] is ClusterSource.GMM},
            key=_key_order,
        )
        clusterings = dict(zip(first, executor.map(lambda key: _cluster_task(prepared, key, config), first)))
        mixtures = [key for key in keys if key[0] is ClusterSource.GMM]
        clusterings.update(zip(mixtures, executor.map(
            lambda key: _cluster_task(prepared, key, config, clusterings[(ClusterSource.KMEANS, key[1], key[2])]),
            mixtures,
        )))
        results = list(executor.map(
            lambda gk: _cell_group_task(groups[gk], prepared[gk[0][2]], clusterings[gk[0]], ood_names),
            group_keys,
        ))

    order = {str(cell): i for i, cell in enumerate(cells)}
    rows = [row for group in results for row in group]
    rows.sort(key=lambda row: (order[f"{row.cluster_source}:{row.metric}:{row.k}:{row.threshold_mode}"], row.ood_set))
    for row in rows:
        if row.error:
            logger.warning("cell %s:%s:%s:%s / %s: %s", row.cluster_source, row.metric, row.k, row.threshold_mode, row.ood_set, row.error)
    return SweepReport(rows=tuple(rows))
