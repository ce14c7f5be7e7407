"""
Cluster Quality - Global Separation, Cluster Purity, radius

Global Separation of cluster c:

    P_cc   = mean of the smallest ceil(x * M) intra-cluster pairwise distances
    P_cc'  = same over the cross pairs with cluster c', minimised over c'
    GS_c   = (P_cc' - P_cc) / max(P_cc', P_cc)         (0 when both are 0)

Pairwise distances are streamed in blocks; only the current smallest
ceil(x * M) values are kept. Purity is the majority-label fraction of a
cluster. The radius is the nearest-rank quantile of member distances to the
cluster mean.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from engine.clustering.assignment import ClusterAssignment, from_labels
from engine.clustering.kmeans import kmeans_fit
from engine.errors import DataError, OodError, UsageError
from engine.geometry.distances import DistanceMetric, pairwise_distances, row_blocks
from engine.geometry.gaussian import estimate_gaussian, mahalanobis_scores
from engine.store.embedding_store import CheckpointSeries, EmbeddingSet

logger = logging.getLogger(__name__)

DEFAULT_FRACTION = 0.1
DEFAULT_RADIUS_QUANTILE = 0.95
# absorbs float noise in q * n before the ceiling
_RANK_SLACK = 1e-9


def nearest_rank(quantile: float, count: int) -> int:
    """1-based nearest rank ceil(q * n), clamped to [1, n]."""
    return max(1, min(count, math.ceil(quantile * count - _RANK_SLACK)))


@dataclass(frozen=True)
class SeparationConfig:
    fraction_x: float = DEFAULT_FRACTION
    metric: DistanceMetric = DistanceMetric.COSINE

    def __post_init__(self):
        if not 0.0 < self.fraction_x <= 1.0:
            raise UsageError(f"fraction_x must be in (0, 1], got {self.fraction_x}", "quality")
        metric = DistanceMetric.parse(self.metric)
        if metric is DistanceMetric.MAHALANOBIS:
            raise UsageError("Global Separation supports cosine or euclidean distances", "quality")
        object.__setattr__(self, "metric", metric)


@dataclass(frozen=True)
class QualityReport:
    sizes: Tuple[int, ...]
    per_cluster_gs: Optional[Tuple[float, ...]]
    per_cluster_purity: Optional[Tuple[float, ...]]
    per_cluster_radius: Tuple[float, ...]
    radius_quantile: float
    radius_metric: DistanceMetric
    separation: SeparationConfig


@dataclass(frozen=True)
class EvolutionRow:
    epoch: int
    cluster: int
    label: int
    global_separation: float


@dataclass(frozen=True)
class ByKRow:
    """One cluster of one K; a K that failed has cluster, GS and purity None and the reason in error."""

    source: str
    k: int
    cluster: Optional[int]
    global_separation: Optional[float]
    purity: Optional[float]
    error: str = ""


class SmallestSelector:
    """Keeps the m smallest values seen so far."""

    def __init__(self, m: int):
        self.m = m
        self.kept = np.empty(0)

    def add(self, values: np.ndarray) -> None:
        combined = np.concatenate([self.kept, values.ravel()])
        if combined.shape[0] > self.m:
            combined = np.partition(combined, self.m - 1)[: self.m]
        self.kept = combined

    def mean(self) -> float:
        # sorted summation so the result does not depend on block order
        return float(np.sum(np.sort(self.kept)) / self.kept.shape[0])


def _intra_truncated_mean(points: np.ndarray, fraction: float, metric: DistanceMetric) -> float:
    n = points.shape[0]
    pairs = n * (n - 1) // 2
    selector = SmallestSelector(nearest_rank(fraction, pairs))
    for start, stop in row_blocks(n):
        block = pairwise_distances(points[start:stop], points[start:], metric)
        rows = np.arange(stop - start)[:, None]
        cols = np.arange(n - start)[None, :]
        selector.add(block[cols > rows])
    return selector.mean()


def _cross_truncated_mean(left: np.ndarray, right: np.ndarray, fraction: float, metric: DistanceMetric) -> float:
    selector = SmallestSelector(nearest_rank(fraction, left.shape[0] * right.shape[0]))
    for start, stop in row_blocks(left.shape[0]):
        for r_start, r_stop in row_blocks(right.shape[0]):
            selector.add(pairwise_distances(left[start:stop], right[r_start:r_stop], metric))
    return selector.mean()


def _map(func, items: Sequence, threads: int) -> List:
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(func, items))


def separation_terms(
    embedding_set: EmbeddingSet,
    clusters: ClusterAssignment,
    config: SeparationConfig,
    threads: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Truncated pairwise means.

    Returns:
        (intra, inter): intra[c] = P_cc, inter[c, c'] = P_cc' (symmetric, diagonal inf)
    """
    if clusters.size != embedding_set.size:
        raise DataError(f"assignment covers {clusters.size} samples, set has {embedding_set.size}", "quality")
    k = clusters.num_clusters
    if k < 2:
        raise DataError("Global Separation needs at least 2 clusters", "quality")
    members = clusters.members
    singletons = [c for c, idx in enumerate(members) if idx.size < 2]
    if singletons:
        raise DataError(f"Global Separation needs >= 2 members per cluster; cluster {singletons[0]} is a singleton", "quality")

    groups = [embedding_set.data[idx] for idx in members]
    intra = np.array(
        _map(lambda c: _intra_truncated_mean(groups[c], config.fraction_x, config.metric), list(range(k)), threads)
    )
    pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
    cross = _map(lambda ab: _cross_truncated_mean(groups[ab[0]], groups[ab[1]], config.fraction_x, config.metric), pairs, threads)

    inter = np.full((k, k), np.inf)
    for (a, b), value in zip(pairs, cross):
        inter[a, b] = inter[b, a] = value
    return intra, inter


def global_separation(
    embedding_set: EmbeddingSet,
    clusters: ClusterAssignment,
    config: SeparationConfig,
    threads: int = 1,
) -> np.ndarray:
    """
    Per-cluster Global Separation in [-1, 1].

    Args:
        embedding_set: Embeddings
        clusters: Partition with K >= 2 and every cluster >= 2 members
        config: Truncation fraction and distance metric
        threads: Worker threads for the pairwise blocks

    Returns:
        Length-K array of GS values
    """
    intra, inter = separation_terms(embedding_set, clusters, config, threads)
    nearest = inter.min(axis=1)
    gs = np.zeros(clusters.num_clusters)
    for c in range(clusters.num_clusters):
        denominator = max(nearest[c], intra[c])
        if denominator > 0.0:
            gs[c] = (nearest[c] - intra[c]) / denominator
    return gs


def cluster_purity(clusters: ClusterAssignment, labels) -> np.ndarray:
    """max_j |C_c intersect t_j| / |C_c| for every cluster."""
    if labels is None:
        raise DataError("cluster purity needs ground-truth labels", "quality")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != clusters.size:
        raise DataError(f"{labels.shape[0]} labels for {clusters.size} assigned samples", "quality")
    if labels.size and labels.min() < 0:
        raise DataError("labels must be non-negative", "quality")
    return np.array([np.bincount(labels[idx]).max() / idx.size for idx in clusters.members])


def member_distances(
    embedding_set: EmbeddingSet,
    clusters: ClusterAssignment,
    metric: "str | DistanceMetric",
) -> List[np.ndarray]:
    """Sorted distances of each cluster's members to the cluster mean."""
    metric = DistanceMetric.parse(metric)
    result = []
    for c, idx in enumerate(clusters.members):
        points = embedding_set.data[idx]
        if metric is DistanceMetric.MAHALANOBIS:
            if idx.size < 2:
                raise DataError(f"cluster {c} is a singleton; its covariance is degenerate", "quality")
            distances = mahalanobis_scores(points, estimate_gaussian(points))
        else:
            distances = pairwise_distances(points, points.mean(axis=0)[None, :], metric)[:, 0]
        result.append(np.sort(distances))
    return result


def cluster_radius(
    embedding_set: EmbeddingSet,
    clusters: ClusterAssignment,
    metric: "str | DistanceMetric",
    quantile: float = DEFAULT_RADIUS_QUANTILE,
) -> np.ndarray:
    """Per-cluster radius: the ceil(q * n)-th smallest member distance to the mean."""
    if not 0.0 < quantile <= 1.0:
        raise UsageError(f"radius quantile must be in (0, 1], got {quantile}", "quality")
    if clusters.size != embedding_set.size:
        raise DataError(f"assignment covers {clusters.size} samples, set has {embedding_set.size}", "quality")
    return np.array(
        [distances[nearest_rank(quantile, distances.shape[0]) - 1] for distances in member_distances(embedding_set, clusters, metric)]
    )


def quality_report(
    embedding_set: EmbeddingSet,
    clusters: ClusterAssignment,
    config: SeparationConfig,
    labels=None,
    radius_metric: "str | DistanceMetric | None" = None,
    quantile: float = DEFAULT_RADIUS_QUANTILE,
    threads: int = 1,
    radius_set: Optional[EmbeddingSet] = None,
) -> QualityReport:
    """
    GS (when K >= 2), purity (when labels are given) and radius in one report.

    radius_set holds the same rows prepared for the radius metric when its
    normalization differs from the one GS is computed on.
    """
    radius_metric = DistanceMetric.parse(radius_metric or config.metric)
    radius_set = embedding_set if radius_set is None else radius_set
    if radius_set.size != embedding_set.size:
        raise DataError(f"radius set has {radius_set.size} rows, clustered set {embedding_set.size}", "quality")
    gs = None
    if clusters.num_clusters >= 2:
        gs = tuple(float(v) for v in global_separation(embedding_set, clusters, config, threads))
    else:
        logger.warning("K=1: Global Separation is undefined, column left empty")
    purity = None if labels is None else tuple(float(v) for v in cluster_purity(clusters, labels))
    radius = tuple(float(v) for v in cluster_radius(radius_set, clusters, radius_metric, quantile))
    return QualityReport(
        sizes=tuple(int(v) for v in clusters.counts),
        per_cluster_gs=gs,
        per_cluster_purity=purity,
        per_cluster_radius=radius,
        radius_quantile=quantile,
        radius_metric=radius_metric,
        separation=config,
    )


def separation_evolution(series: CheckpointSeries, config: SeparationConfig, threads: int = 1) -> List[EvolutionRow]:
    """GS of ground-truth clusters at every checkpoint, in epoch order."""
    rows: List[EvolutionRow] = []
    for epoch, embedding_set in series.entries:
        try:
            clusters = from_labels(embedding_set)
            values = global_separation(embedding_set, clusters, config, threads)
        except OodError as e:
            raise type(e)(f"epoch {epoch}: {e.message}", e.module)
        for c, value in enumerate(values):
            rows.append(EvolutionRow(epoch, c, int(clusters.label_values[c]), float(value)))
    return rows


def summarize(values: Sequence[float]) -> Dict[str, float]:
    """Boxplot statistics of per-cluster values."""
    array = np.asarray(values, dtype=np.float64)
    if array.size == 0:
        raise DataError("nothing to summarize", "quality")
    q1, median, q3 = np.quantile(array, [0.25, 0.5, 0.75])
    return {
        "min": float(array.min()),
        "q1": float(q1),
        "median": float(median),
        "q3": float(q3),
        "max": float(array.max()),
        "mean": float(array.mean()),
    }


def separation_by_k(
    embedding_set: EmbeddingSet,
    ks: Sequence[int],
    seed: int,
    config: SeparationConfig,
    threads: int = 1,
) -> List[ByKRow]:
    """
    GS and purity of k-means clusters for each K, plus ground-truth clusters when labelled.

    Purity is only reported for k-means clusters; ground-truth clusters are pure by construction.
    A K that cannot be evaluated becomes a single row carrying the reason; the other K are kept.
    """
    rows: List[ByKRow] = []
    if embedding_set.has_labels:
        gt = from_labels(embedding_set)
        try:
            values = global_separation(embedding_set, gt, config, threads)
            rows.extend(ByKRow("gt", gt.num_clusters, c, float(value), None) for c, value in enumerate(values))
        except OodError as e:
            logger.warning("by-K: ground-truth clusters skipped: %s", e)
            rows.append(ByKRow("gt", gt.num_clusters, None, None, None, str(e)))

    for k in ks:
        try:
            _, clusters = kmeans_fit(embedding_set, k, seed=seed)
            values = global_separation(embedding_set, clusters, config, threads)
        except OodError as e:
            logger.warning("by-K: k=%d skipped: %s", k, e)
            rows.append(ByKRow("kmeans", k, None, None, None, str(e)))
            continue
        purity = cluster_purity(clusters, embedding_set.labels) if embedding_set.has_labels else [None] * k
        for c in range(k):
            rows.append(ByKRow("kmeans", k, c, float(values[c]), None if purity[c] is None else float(purity[c])))
    return rows
