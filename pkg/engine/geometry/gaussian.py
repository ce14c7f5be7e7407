"""
Regularized Gaussian estimates.

Covariances are the biased (1/n) maximum-likelihood estimate. Before the
Cholesky factorization a scale-aware ridge is added:

    eps = max(1e-6 * trace(cov) / D, 1e-12)

Mahalanobis scores are the squared form (x - mu)^T (cov + eps I)^-1 (x - mu),
evaluated with triangular solves against the stored factor.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from engine.errors import DataError, NumericalError

RIDGE_SCALE = 1e-6
RIDGE_FLOOR = 1e-12
SYMMETRY_TOL = 1e-9
LOG_2PI = math.log(2.0 * math.pi)


def regularization_epsilon(covariance: np.ndarray) -> float:
    dimension = covariance.shape[0]
    return max(RIDGE_SCALE * float(np.trace(covariance)) / dimension, RIDGE_FLOOR)


@dataclass(frozen=True)
class GaussianStats:
    """Mean, covariance and the lower Cholesky factor of cov + eps I."""

    mean: np.ndarray
    covariance: np.ndarray
    factor: np.ndarray
    epsilon: float

    @classmethod
    def from_covariance(cls, mean, covariance, epsilon: Optional[float] = None) -> "GaussianStats":
        """
        Build stats from a mean and covariance.

        Args:
            mean: Length-D vector
            covariance: D x D symmetric matrix
            epsilon: Ridge; None applies the trace rule

        Raises:
            NumericalError if cov + eps I is not positive definite
        """
        mean = np.asarray(mean, dtype=np.float64).ravel()
        covariance = np.atleast_2d(np.asarray(covariance, dtype=np.float64))
        dimension = mean.shape[0]
        if covariance.shape != (dimension, dimension):
            raise DataError(f"covariance shape {covariance.shape} does not match mean length {dimension}", "geometry")

        asymmetry = float(np.max(np.abs(covariance - covariance.T))) if dimension > 1 else 0.0
        scale = max(1.0, float(np.max(np.abs(covariance))))
        if asymmetry > SYMMETRY_TOL * scale:
            raise NumericalError(f"covariance is not symmetric (max asymmetry {asymmetry:.3e})", "geometry")
        covariance = 0.5 * (covariance + covariance.T)

        if epsilon is None:
            epsilon = regularization_epsilon(covariance)
        regularized = covariance + epsilon * np.eye(dimension)
        try:
            factor = linalg.cholesky(regularized, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError) as e:
            raise NumericalError(f"Cholesky factorization failed after regularization (eps={epsilon:.3e}): {e}", "geometry")

        for array in (mean, covariance, factor):
            array.setflags(write=False)
        return cls(mean=mean, covariance=covariance, factor=factor, epsilon=float(epsilon))

    @property
    def dimension(self) -> int:
        return int(self.mean.shape[0])

    @property
    def log_det(self) -> float:
        """log det(cov + eps I)."""
        return 2.0 * float(np.sum(np.log(np.diag(self.factor))))


def estimate_gaussian(samples, weights=None, epsilon: Optional[float] = None) -> GaussianStats:
    """
    Mean and biased covariance of the rows of samples.

    Args:
        samples: n x D matrix, n >= 1
        weights: Optional non-negative per-row weights (EM responsibilities)
        epsilon: Ridge override; None applies the trace rule

    Returns:
        GaussianStats with the factor of cov + eps I
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] < 1:
        raise DataError("cannot estimate a Gaussian from zero samples", "geometry")

    if weights is None:
        mean = samples.mean(axis=0)
        centered = samples - mean
        covariance = centered.T @ centered / samples.shape[0]
    else:
        weights = np.asarray(weights, dtype=np.float64).ravel()
        total = float(weights.sum())
        if weights.shape[0] != samples.shape[0] or total <= 0.0:
            raise DataError("weights must match the samples and have a positive sum", "geometry")
        mean = weights @ samples / total
        centered = samples - mean
        covariance = (weights[:, None] * centered).T @ centered / total

    return GaussianStats.from_covariance(mean, covariance, epsilon)


def _check_dimension(x: np.ndarray, stats: GaussianStats) -> None:
    if x.shape[-1] != stats.dimension:
        raise DataError(f"dimension mismatch: {x.shape[-1]} vs {stats.dimension}", "geometry")


def mahalanobis_scores(samples, stats: GaussianStats) -> np.ndarray:
    """Squared Mahalanobis score of every row of samples."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    _check_dimension(samples, stats)
    whitened = linalg.solve_triangular(stats.factor, (samples - stats.mean).T, lower=True, check_finite=False)
    return np.sum(whitened * whitened, axis=0)


def mahalanobis_score(x, stats: GaussianStats) -> float:
    """(x - mu)^T (cov + eps I)^-1 (x - mu), no square root."""
    x = np.asarray(x, dtype=np.float64).ravel()
    return float(mahalanobis_scores(x[None, :], stats)[0])


def log_gaussian_densities(samples, stats: GaussianStats, weight: float = 1.0) -> np.ndarray:
    """log weight + log N(x | mu, cov + eps I) for every row."""
    if not 0.0 < weight <= 1.0:
        raise DataError(f"component weight must be in (0, 1], got {weight}", "geometry")
    scores = mahalanobis_scores(samples, stats)
    return math.log(weight) - 0.5 * (stats.dimension * LOG_2PI + stats.log_det + scores)


def log_gaussian_density(x, stats: GaussianStats, weight: float = 1.0) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    return float(log_gaussian_densities(x[None, :], stats, weight)[0])
