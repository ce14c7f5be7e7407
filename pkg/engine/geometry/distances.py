"""
Distance metrics: cosine (1 - cosine similarity), Euclidean, and the
Mahalanobis tag that defers to GaussianStats.
"""

from enum import Enum
from typing import Iterator, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from engine.errors import DataError, UsageError

PAIRWISE_BLOCK = 1024


class DistanceMetric(str, Enum):
    COSINE = "cosine"
    EUCLIDEAN = "euclidean"
    MAHALANOBIS = "mahalanobis"

    @classmethod
    def parse(cls, value: "str | DistanceMetric") -> "DistanceMetric":
        if isinstance(value, DistanceMetric):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise UsageError(f"unknown distance metric '{value}' (expected cosine, euclidean, mahalanobis)", "geometry")


def _as_pair(a, b) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.size} vs {b.size}", "geometry")
    return a, b


def cosine_distance(a, b) -> float:
    """1 - (a.b)/(|a||b|), in [0, 2]. Both vectors must be nonzero."""
    a, b = _as_pair(a, b)
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise DataError("cosine distance is undefined for a zero vector", "geometry")
    similarity = float(np.dot(a, b) / (norm_a * norm_b))
    return float(min(2.0, max(0.0, 1.0 - similarity)))


def euclidean_distance(a, b) -> float:
    a, b = _as_pair(a, b)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def _check_rows(matrix: np.ndarray, metric: DistanceMetric, what: str) -> None:
    if metric is DistanceMetric.COSINE:
        zero = ~np.any(matrix != 0.0, axis=1)
        if zero.any():
            raise DataError(f"cosine distance: zero vector in {what} row {int(np.flatnonzero(zero)[0])}", "geometry")


def pairwise_distances(a: np.ndarray, b: np.ndarray, metric: "str | DistanceMetric") -> np.ndarray:
    """
    Distance matrix between the rows of a and b (cosine or Euclidean).

    Returns:
        Array of shape (len(a), len(b))
    """
    metric = DistanceMetric.parse(metric)
    if metric is DistanceMetric.MAHALANOBIS:
        raise UsageError("pairwise Mahalanobis distances need GaussianStats; use mahalanobis_scores", "geometry")
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DataError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}", "geometry")
    _check_rows(a, metric, "left")
    _check_rows(b, metric, "right")

    distances = cdist(a, b, metric=metric.value)
    if metric is DistanceMetric.COSINE:
        np.clip(distances, 0.0, 2.0, out=distances)
    return distances


def row_blocks(count: int, block: int = PAIRWISE_BLOCK) -> Iterator[Tuple[int, int]]:
    """Consecutive [start, stop) ranges covering 0..count."""
    for start in range(0, count, block):
        yield start, min(count, start + block)
