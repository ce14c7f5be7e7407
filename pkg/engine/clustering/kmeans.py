"""
k-means with k-means++ seeding and Lloyd iterations.

Seeding draws from SplitMix64, so a fixed seed reproduces the same clusters
on any platform. Row order matters: the seeded draws index rows.

Empty clusters are repaired by moving the point farthest from its centroid
(taken from a cluster with more than one member) into the empty cluster.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from engine.clustering.assignment import ClusterAssignment, ClusterSource
from engine.clustering.seeding import SplitMix64
from engine.errors import DataError
from engine.store.embedding_store import EmbeddingSet

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 300
DEFAULT_TOL = 1e-6
DEFAULT_N_INIT = 4


@dataclass(frozen=True)
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    iterations_run: int
    inertia_trace: Tuple[float, ...] = ()

    @property
    def num_clusters(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.centroids.shape[1])


def squared_distances(data: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """N x K squared Euclidean distances, computed from differences."""
    return cdist(data, centers, "sqeuclidean")


def _kmeans_plus_plus(data: np.ndarray, k: int, rng: SplitMix64) -> np.ndarray:
    n = data.shape[0]
    chosen = [rng.next_index(n)]
    closest = squared_distances(data, data[chosen[0]][None, :])[:, 0]

    for _ in range(1, k):
        total = float(closest.sum())
        if total <= 0.0:
            index = rng.next_index(n)
        else:
            target = rng.next_float() * total
            index = min(n - 1, int(np.searchsorted(np.cumsum(closest), target, side="right")))
        chosen.append(index)
        closest = np.minimum(closest, squared_distances(data, data[index][None, :])[:, 0])

    return data[chosen].copy()


def repair_empty_clusters(labels: np.ndarray, cost: np.ndarray, k: int) -> List[Tuple[int, int]]:
    """
    Fill empty clusters in place.

    For each empty cluster (ascending id) the highest-cost point among clusters
    with more than one member moves into it (ties -> lowest index).

    Returns:
        (cluster, moved sample index) pairs
    """
    counts = np.bincount(labels, minlength=k)
    moved = []
    for cluster in range(k):
        if counts[cluster] > 0:
            continue
        candidates = np.where(counts[labels] > 1, cost, -np.inf)
        index = int(np.argmax(candidates))
        counts[labels[index]] -= 1
        labels[index] = cluster
        counts[cluster] = 1
        cost[index] = 0.0
        moved.append((cluster, index))
    return moved


def _assign_step(data: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    k = centroids.shape[0]
    distances = squared_distances(data, centroids)
    labels = np.argmin(distances, axis=1)
    cost = distances[np.arange(data.shape[0]), labels]
    for cluster, index in repair_empty_clusters(labels, cost, k):
        centroids[cluster] = data[index]
    return labels


def _inertia(data: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    diff = data - centroids[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _lloyd(data: np.ndarray, centroids: np.ndarray, max_iter: int, tol: float) -> Tuple[KMeansModel, np.ndarray]:
    k = centroids.shape[0]
    tol_abs = tol * float(np.mean(np.var(data, axis=0)))
    trace: List[float] = []
    iterations = 0

    for iterations in range(1, max_iter + 1):
        labels = _assign_step(data, centroids)
        updated = np.vstack([data[labels == c].mean(axis=0) for c in range(k)])
        shift = float(np.sum((updated - centroids) ** 2))
        centroids = updated
        trace.append(_inertia(data, centroids, labels))
        if shift <= tol_abs:
            break

    labels = _assign_step(data, centroids)
    inertia = _inertia(data, centroids, labels)
    trace.append(inertia)
    return KMeansModel(centroids=centroids, inertia=inertia, iterations_run=iterations, inertia_trace=tuple(trace)), labels


def kmeans_fit(
    embedding_set: EmbeddingSet,
    k: int,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    n_init: int = DEFAULT_N_INIT,
) -> Tuple[KMeansModel, ClusterAssignment]:
    """
    Fit k-means.

    Args:
        embedding_set: Samples to cluster
        k: Number of clusters, 1 <= k <= N
        seed: SplitMix64 seed; restart seeds are drawn from it
        max_iter: Lloyd iteration cap per restart
        tol: Stop when the summed squared centroid shift is below tol * mean feature variance
        n_init: Independent restarts; the lowest inertia wins (ties -> earliest)

    Returns:
        (KMeansModel, ClusterAssignment) with nearest-centroid labels, ties -> lowest index
    """
    data = embedding_set.data
    n = data.shape[0]
    if not 1 <= k <= n:
        raise DataError(f"k-means needs 1 <= k <= N, got k={k}, N={n}", "clustering")
    if max_iter < 1 or n_init < 1:
        raise DataError("max_iter and n_init must be >= 1", "clustering")

    seeds = SplitMix64(seed)
    best_model = None
    best_labels = None
    for restart in range(n_init):
        rng = SplitMix64(seeds.next_u64())
        model, labels = _lloyd(data, _kmeans_plus_plus(data, k, rng), max_iter, tol)
        logger.debug("k-means restart %d: inertia %.6g after %d iterations", restart, model.inertia, model.iterations_run)
        if best_model is None or model.inertia < best_model.inertia:
            best_model, best_labels = model, labels

    best_model.centroids.setflags(write=False)
    logger.info("k-means k=%d: inertia %.6g, %d iterations", k, best_model.inertia, best_model.iterations_run)
    return best_model, ClusterAssignment(num_clusters=k, assignment=best_labels, source=ClusterSource.KMEANS)
