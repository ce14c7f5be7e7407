"""
Full-covariance Gaussian mixture fitted by Expectation Maximisation.

Initialization comes from k-means: component means from the centroids,
covariances from each cluster's member scatter, weights from member
fractions. Every M-step covariance gets the same trace ridge as
estimate_gaussian.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from engine.clustering.assignment import ClusterAssignment, ClusterSource
from engine.clustering.kmeans import DEFAULT_N_INIT, kmeans_fit
from engine.errors import DataError
from engine.geometry.gaussian import GaussianStats, estimate_gaussian, log_gaussian_densities
from engine.store.embedding_store import EmbeddingSet

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 200
DEFAULT_TOL = 1e-6
# keeps every component weight strictly positive
_WEIGHT_FLOOR = 10 * np.finfo(np.float64).eps


@dataclass(frozen=True)
class GmmModel:
    components: Tuple[GaussianStats, ...]
    weights: np.ndarray
    final_log_likelihood: float
    iterations_run: int
    log_likelihood_trace: Tuple[float, ...] = ()

    @property
    def num_components(self) -> int:
        return len(self.components)

    @property
    def dimension(self) -> int:
        return self.components[0].dimension

    @property
    def means(self) -> np.ndarray:
        return np.vstack([component.mean for component in self.components])


def component_log_densities(model: GmmModel, data: np.ndarray) -> np.ndarray:
    """N x K matrix of log weight_k + log N(x | component k)."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[1] != model.dimension:
        raise DataError(f"dimension mismatch: {data.shape[1]} vs {model.dimension}", "clustering")
    return np.column_stack(
        [log_gaussian_densities(data, component, float(weight)) for component, weight in zip(model.components, model.weights)]
    )


def log_likelihoods(model: GmmModel, data: np.ndarray) -> np.ndarray:
    """Per-sample mixture log density, log sum_k exp(...), computed stably."""
    return logsumexp(component_log_densities(model, data), axis=1)


def responsibilities(model: GmmModel, data: np.ndarray) -> np.ndarray:
    log_prob = component_log_densities(model, data)
    return np.exp(log_prob - logsumexp(log_prob, axis=1, keepdims=True))


def _e_step(components, weights, data) -> Tuple[float, np.ndarray, np.ndarray]:
    log_prob = np.column_stack(
        [log_gaussian_densities(data, component, float(weight)) for component, weight in zip(components, weights)]
    )
    log_norm = logsumexp(log_prob, axis=1)
    resp = np.exp(log_prob - log_norm[:, None])
    # fixed summation order keeps the trace independent of thread scheduling
    return float(np.sum(log_norm) / data.shape[0]), resp, log_prob


def _m_step(data: np.ndarray, resp: np.ndarray) -> Tuple[List[GaussianStats], np.ndarray]:
    totals = resp.sum(axis=0) + _WEIGHT_FLOOR
    weights = totals / totals.sum()
    components = [estimate_gaussian(data, resp[:, c] + _WEIGHT_FLOOR) for c in range(resp.shape[1])]
    return components, weights


def _finalize_assignment(log_prob: np.ndarray) -> np.ndarray:
    """argmax responsibility (ties -> lowest component); empty components take their most likely sample."""
    labels = np.argmax(log_prob, axis=1)
    k = log_prob.shape[1]
    counts = np.bincount(labels, minlength=k)
    for component in range(k):
        if counts[component] > 0:
            continue
        candidates = np.where(counts[labels] > 1, log_prob[:, component], -np.inf)
        index = int(np.argmax(candidates))
        counts[labels[index]] -= 1
        labels[index] = component
        counts[component] = 1
    return labels


def gmm_fit(
    embedding_set: EmbeddingSet,
    k: int,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    n_init: int = DEFAULT_N_INIT,
    init: Optional[ClusterAssignment] = None,
) -> Tuple[GmmModel, ClusterAssignment]:
    """
    Fit a K-component full-covariance mixture.

    Args:
        embedding_set: Samples
        k: Components, 1 <= k <= N
        seed: Seed of the k-means initialization
        max_iter: EM iteration cap
        tol: Stop when the mean log-likelihood improves by less than tol * max(1, |mean log-likelihood|)
        n_init: k-means restarts used for the initialization
        init: k-means clusters of the same samples to start from; computed here when absent

    Returns:
        (GmmModel, ClusterAssignment by argmax responsibility)
    """
    data = embedding_set.data
    n = data.shape[0]
    if not 1 <= k <= n:
        raise DataError(f"GMM needs 1 <= k <= N, got k={k}, N={n}", "clustering")

    if init is None:
        _, init = kmeans_fit(embedding_set, k, seed=seed, n_init=n_init)
    elif init.size != n or init.num_clusters != k:
        raise DataError(f"initial clusters cover {init.size} samples in {init.num_clusters} groups, expected {n} in {k}", "clustering")
    components = [estimate_gaussian(data[members]) for members in init.members]
    weights = init.counts / float(n)

    mean_ll, resp, log_prob = _e_step(components, weights, data)
    trace = [mean_ll]
    iterations = 0

    for iterations in range(1, max_iter + 1):
        components, weights = _m_step(data, resp)
        new_ll, resp, log_prob = _e_step(components, weights, data)
        trace.append(new_ll)
        improvement = new_ll - mean_ll
        mean_ll = new_ll
        if improvement < tol * max(1.0, abs(mean_ll)):
            break

    logger.info("GMM k=%d: mean log-likelihood %.6g after %d iterations", k, mean_ll, iterations)
    weights = np.asarray(weights, dtype=np.float64)
    weights.setflags(write=False)
    model = GmmModel(
        components=tuple(components),
        weights=weights,
        final_log_likelihood=mean_ll,
        iterations_run=iterations,
        log_likelihood_trace=tuple(trace),
    )
    clusters = ClusterAssignment(num_clusters=k, assignment=_finalize_assignment(log_prob), source=ClusterSource.GMM)
    return model, clusters
