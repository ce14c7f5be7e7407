"""
Cluster assignments: ground-truth labels and the single-cluster rule.

A ClusterAssignment partitions the sample indices 0..N-1 into K non-empty
clusters.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np

from engine.errors import DataError, UsageError
from engine.store.embedding_store import EmbeddingSet


class ClusterSource(str, Enum):
    GROUND_TRUTH = "gt"
    SINGLE = "single"
    KMEANS = "kmeans"
    GMM = "gmm"

    @classmethod
    def parse(cls, value: "str | ClusterSource") -> "ClusterSource":
        if isinstance(value, ClusterSource):
            return value
        text = str(value).strip().lower()
        if text == "ground_truth":
            return cls.GROUND_TRUTH
        try:
            return cls(text)
        except ValueError:
            raise UsageError(f"unknown cluster source '{value}' (expected gt, single, kmeans, gmm)", "clustering")


@dataclass(frozen=True)
class ClusterAssignment:
    """Sample -> cluster id mapping with K non-empty clusters."""

    num_clusters: int
    assignment: np.ndarray
    source: ClusterSource
    label_values: Optional[np.ndarray] = None

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=np.int64).copy()
        if assignment.ndim != 1 or assignment.size == 0:
            raise DataError("assignment must be a non-empty 1-D list of cluster ids", "clustering")
        if self.num_clusters < 1:
            raise DataError("num_clusters must be >= 1", "clustering")
        if assignment.min() < 0 or assignment.max() >= self.num_clusters:
            raise DataError(f"cluster ids must lie in [0, {self.num_clusters})", "clustering")
        counts = np.bincount(assignment, minlength=self.num_clusters)
        if (counts == 0).any():
            empty = int(np.flatnonzero(counts == 0)[0])
            raise DataError(f"cluster {empty} is empty", "clustering")
        assignment.setflags(write=False)
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "source", ClusterSource.parse(self.source))

    @property
    def size(self) -> int:
        return int(self.assignment.shape[0])

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.num_clusters)

    @property
    def members(self) -> List[np.ndarray]:
        """Per-cluster sorted member index arrays."""
        order = np.argsort(self.assignment, kind="stable")
        boundaries = np.cumsum(self.counts)[:-1]
        return np.split(order, boundaries)


def from_labels(embedding_set: EmbeddingSet) -> ClusterAssignment:
    """Dense remap of ground-truth labels: ascending label order -> 0..K-1."""
    if not embedding_set.has_labels:
        raise DataError(f"{embedding_set.name}: ground-truth clusters need labels", "clustering")
    label_values, dense = np.unique(embedding_set.labels, return_inverse=True)
    return ClusterAssignment(
        num_clusters=int(label_values.size),
        assignment=dense.ravel(),
        source=ClusterSource.GROUND_TRUTH,
        label_values=label_values,
    )


def single_cluster(embedding_set: EmbeddingSet) -> ClusterAssignment:
    """Every sample in cluster 0; labels are ignored."""
    return ClusterAssignment(
        num_clusters=1,
        assignment=np.zeros(embedding_set.size, dtype=np.int64),
        source=ClusterSource.SINGLE,
    )
