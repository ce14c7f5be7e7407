"""
Reference-distribution scoring.

fit() computes, for each cluster, the mean of its training members and the
sorted distances of those members to it (the cluster's reference list).
A test sample is assigned to its nearest cluster and scored by where its
distance falls in a reference list:

  cluster threshold: the assigned cluster's own list
  global threshold:  the pooled list over all clusters
  gmm_default:       mixture log-likelihood ranked against the training
                     log-likelihoods, irrespective of component

Values are mid-rank survival fractions in [0, 1]; higher means more
in-distribution. Only training distances are ever used as reference.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from engine.clustering.assign import assign, distances_to_clusters
from engine.clustering.assignment import ClusterAssignment, ClusterSource
from engine.clustering.gmm import GmmModel, log_likelihoods, responsibilities
from engine.errors import DataError, UsageError
from engine.geometry.distances import DistanceMetric
from engine.geometry.gaussian import GaussianStats, estimate_gaussian
from engine.store.embedding_store import EmbeddingSet

logger = logging.getLogger(__name__)


class ThresholdMode(str, Enum):
    CLUSTER = "cluster"
    GLOBAL = "global"
    GMM_DEFAULT = "gmm_default"

    @classmethod
    def parse(cls, value: "str | ThresholdMode") -> "ThresholdMode":
        if isinstance(value, ThresholdMode):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise UsageError(f"unknown threshold mode '{value}' (expected cluster, global, gmm_default)", "scoring")


@dataclass(frozen=True)
class ClusterModel:
    metric: DistanceMetric
    source: ClusterSource
    means: np.ndarray
    references: Tuple[np.ndarray, ...]
    global_reference: np.ndarray
    gaussians: Optional[Tuple[GaussianStats, ...]] = None
    gmm: Optional[GmmModel] = None
    gmm_reference: Optional[np.ndarray] = None
    normalized: bool = False

    @property
    def num_clusters(self) -> int:
        return int(self.means.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.means.shape[1])

    @property
    def uses_responsibilities(self) -> bool:
        """Mixture-built models pick the cluster by argmax responsibility."""
        return self.source is ClusterSource.GMM and self.gmm is not None


@dataclass(frozen=True)
class ProbabilityScore:
    value: float
    assigned_cluster: int
    raw_distance: float


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array, dtype=np.float64)
    array.setflags(write=False)
    return array


def fit(
    train: EmbeddingSet,
    clusters: ClusterAssignment,
    metric: "str | DistanceMetric",
    gmm: Optional[GmmModel] = None,
    normalized: bool = False,
) -> ClusterModel:
    """
    Fit per-cluster means and reference distance lists on training data.

    Args:
        train: Training embeddings (already in the scored representation)
        clusters: Partition of the training rows
        metric: cosine, euclidean or mahalanobis
        gmm: Mixture enabling gmm_default scoring (and responsibility assignment for GMM clusters)
        normalized: Whether train was L2-normalized; samples scored later must be prepared the same way

    Returns:
        ClusterModel with sorted per-cluster and pooled references
    """
    metric = DistanceMetric.parse(metric)
    if clusters.size != train.size:
        raise DataError(f"assignment covers {clusters.size} samples, train set has {train.size}", "scoring")
    if gmm is not None and gmm.dimension != train.dimension:
        raise DataError(f"mixture dimension {gmm.dimension} does not match train dimension {train.dimension}", "scoring")

    data = train.data
    members = clusters.members
    means = np.vstack([data[idx].mean(axis=0) for idx in members])

    gaussians = None
    if metric is DistanceMetric.MAHALANOBIS:
        singletons = [c for c, idx in enumerate(members) if idx.size < 2]
        if singletons:
            raise DataError(
                f"Mahalanobis scoring needs >= 2 members per cluster; cluster {singletons[0]} is a singleton", "scoring"
            )
        gaussians = tuple(estimate_gaussian(data[idx]) for idx in members)

    references = []
    for c, idx in enumerate(members):
        own = None if gaussians is None else [gaussians[c]]
        distances = distances_to_clusters(data[idx], means[c:c + 1], metric, own)[:, 0]
        references.append(_frozen(np.sort(distances)))

    gmm_reference = None
    if gmm is not None:
        gmm_reference = _frozen(np.sort(log_likelihoods(gmm, data)))

    logger.info("fitted %s scoring model: K=%d, %d reference distances", metric.value, len(members), train.size)
    return ClusterModel(
        metric=metric,
        source=clusters.source,
        means=_frozen(means),
        references=tuple(references),
        global_reference=_frozen(np.sort(np.concatenate(references))),
        gaussians=gaussians,
        gmm=gmm,
        gmm_reference=gmm_reference,
        normalized=normalized,
    )


def midrank_survival(reference: np.ndarray, values: np.ndarray) -> np.ndarray:
    """(count(ref > v) + 0.5 * count(ref == v)) / n for a sorted reference."""
    values = np.asarray(values, dtype=np.float64)
    left = np.searchsorted(reference, values, side="left")
    right = np.searchsorted(reference, values, side="right")
    n = reference.shape[0]
    return ((n - right) + 0.5 * (right - left)) / n


def midrank_cdf(reference: np.ndarray, values: np.ndarray) -> np.ndarray:
    """(count(ref < v) + 0.5 * count(ref == v)) / n for a sorted reference."""
    values = np.asarray(values, dtype=np.float64)
    left = np.searchsorted(reference, values, side="left")
    right = np.searchsorted(reference, values, side="right")
    return (left + 0.5 * (right - left)) / reference.shape[0]


def _check_dimension(model: ClusterModel, data: np.ndarray) -> None:
    if data.shape[1] != model.dimension:
        raise DataError(f"dimension mismatch: samples have {data.shape[1]}, model {model.dimension}", "scoring")


def score_many(model: ClusterModel, samples, mode: "str | ThresholdMode") -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Score many samples.

    Returns:
        (assigned cluster, raw score, probability value) arrays. The raw score is
        the distance to the assigned cluster, or the mixture log-likelihood for gmm_default.
    """
    mode = ThresholdMode.parse(mode)
    data = samples.data if isinstance(samples, EmbeddingSet) else np.atleast_2d(np.asarray(samples, dtype=np.float64))
    _check_dimension(model, data)

    if mode is ThresholdMode.GMM_DEFAULT:
        if model.gmm is None or model.gmm_reference is None:
            raise UsageError("gmm_default scoring needs a model fitted with a Gaussian mixture", "scoring")
        assigned = np.argmax(responsibilities(model.gmm, data), axis=1)
        raw = log_likelihoods(model.gmm, data)
        return assigned, raw, midrank_cdf(model.gmm_reference, raw)

    assigned, raw = assign(model, data, model.metric)
    if mode is ThresholdMode.GLOBAL:
        return assigned, raw, midrank_survival(model.global_reference, raw)

    values = np.empty(raw.shape[0])
    for c in range(model.num_clusters):
        mask = assigned == c
        if mask.any():
            values[mask] = midrank_survival(model.references[c], raw[mask])
    return assigned, raw, values


def _score_one(model: ClusterModel, x, mode: ThresholdMode) -> ProbabilityScore:
    x = np.asarray(x, dtype=np.float64).ravel()
    assigned, raw, values = score_many(model, x[None, :], mode)
    return ProbabilityScore(value=float(values[0]), assigned_cluster=int(assigned[0]), raw_distance=float(raw[0]))


def score_cluster_threshold(model: ClusterModel, x) -> ProbabilityScore:
    return _score_one(model, x, ThresholdMode.CLUSTER)


def score_global_threshold(model: ClusterModel, x) -> ProbabilityScore:
    return _score_one(model, x, ThresholdMode.GLOBAL)


def score_gmm_global(model: ClusterModel, x) -> ProbabilityScore:
    """Mixture likelihood ranked against the training likelihoods; raw_distance holds the log-likelihood."""
    return _score_one(model, x, ThresholdMode.GMM_DEFAULT)
