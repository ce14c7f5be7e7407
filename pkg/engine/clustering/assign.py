"""
Assign new samples to fitted clusters.

Nearest cluster mean under the requested metric for k-means, ground-truth
and single-cluster models; argmax responsibility for mixtures. Ties go to
the lowest cluster id.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from engine.clustering.gmm import GmmModel, responsibilities
from engine.clustering.kmeans import KMeansModel
from engine.errors import DataError, UsageError
from engine.geometry.distances import DistanceMetric, pairwise_distances
from engine.geometry.gaussian import GaussianStats, mahalanobis_scores
from engine.store.embedding_store import EmbeddingSet


def _as_matrix(samples: Union[EmbeddingSet, np.ndarray]) -> np.ndarray:
    if isinstance(samples, EmbeddingSet):
        return samples.data
    return np.atleast_2d(np.asarray(samples, dtype=np.float64))


def distances_to_clusters(
    data: np.ndarray,
    means: np.ndarray,
    metric: DistanceMetric,
    gaussians: Optional[Sequence[GaussianStats]] = None,
) -> np.ndarray:
    """N x K distances from every sample to every cluster."""
    if data.shape[1] != means.shape[1]:
        raise DataError(f"dimension mismatch: samples have {data.shape[1]}, clusters {means.shape[1]}", "clustering")
    if metric is DistanceMetric.MAHALANOBIS:
        if gaussians is None:
            raise UsageError("Mahalanobis assignment needs per-cluster Gaussian stats", "clustering")
        return np.column_stack([mahalanobis_scores(data, stats) for stats in gaussians])
    return pairwise_distances(data, means, metric)


def nearest_cluster(
    data: np.ndarray,
    means: np.ndarray,
    metric: DistanceMetric,
    gaussians: Optional[Sequence[GaussianStats]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    distances = distances_to_clusters(data, means, metric, gaussians)
    labels = np.argmin(distances, axis=1)
    return labels, distances[np.arange(data.shape[0]), labels]


def mixture_assignment(
    gmm: GmmModel,
    data: np.ndarray,
    metric: DistanceMetric,
) -> Tuple[np.ndarray, np.ndarray]:
    """argmax responsibility, then the metric distance to that component."""
    labels = np.argmax(responsibilities(gmm, data), axis=1)
    distances = distances_to_clusters(data, gmm.means, metric, gmm.components)
    return labels, distances[np.arange(data.shape[0]), labels]


def assign(model, samples: Union[EmbeddingSet, np.ndarray], metric: "str | DistanceMetric") -> Tuple[np.ndarray, np.ndarray]:
    """
    Map samples to clusters of a fitted model.

    Args:
        model: KMeansModel, GmmModel or scoring ClusterModel
        samples: EmbeddingSet or N x D matrix
        metric: cosine, euclidean or mahalanobis

    Returns:
        (cluster ids, distance of each sample to its assigned cluster)
    """
    metric = DistanceMetric.parse(metric)
    data = _as_matrix(samples)

    if isinstance(model, KMeansModel):
        if metric is DistanceMetric.MAHALANOBIS:
            raise UsageError("k-means models store no Gaussian stats; Mahalanobis assignment is unavailable", "clustering")
        return nearest_cluster(data, model.centroids, metric)

    if isinstance(model, GmmModel):
        return mixture_assignment(model, data, metric)

    means = getattr(model, "means", None)
    if means is None:
        raise UsageError(f"cannot assign with a {type(model).__name__}", "clustering")
    gaussians = getattr(model, "gaussians", None)
    if metric is DistanceMetric.MAHALANOBIS and gaussians is None:
        raise UsageError("model has no Gaussian stats; Mahalanobis assignment is unavailable", "clustering")
    if getattr(model, "uses_responsibilities", False):
        # mixture picks the cluster, the model's own cluster stats give the distance
        labels = np.argmax(responsibilities(model.gmm, data), axis=1)
        distances = distances_to_clusters(data, means, metric, gaussians)
        return labels, distances[np.arange(data.shape[0]), labels]
    return nearest_cluster(data, means, metric, gaussians)
