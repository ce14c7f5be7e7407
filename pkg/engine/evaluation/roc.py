"""
ROC analysis for ID-vs-OOD scores (higher score = more in-distribution).

AUROC is the Mann-Whitney statistic with mid-rank ties:

    AUROC = (R_id - n_id (n_id + 1) / 2) / (n_id * n_ood)

where R_id is the rank sum of the ID scores in the pooled sample.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from engine.errors import DataError


@dataclass(frozen=True)
class BinaryScoredSample:
    score: float
    is_id: bool


def _split(samples: Sequence[BinaryScoredSample]) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.array([s.score for s in samples], dtype=np.float64)
    is_id = np.array([bool(s.is_id) for s in samples], dtype=bool)
    return scores, is_id


def _check(scores: np.ndarray, is_id: np.ndarray) -> Tuple[int, int]:
    if scores.shape != is_id.shape:
        raise DataError("scores and labels differ in length", "evaluation")
    if not np.isfinite(scores).all():
        raise DataError(f"non-finite score at position {int(np.flatnonzero(~np.isfinite(scores))[0])}", "evaluation")
    n_id = int(is_id.sum())
    n_ood = int(is_id.size - n_id)
    if n_id == 0 or n_ood == 0:
        raise DataError(f"AUROC needs both classes, got {n_id} ID and {n_ood} OOD samples", "evaluation")
    return n_id, n_ood


def auroc_from_arrays(scores, is_id) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    is_id = np.asarray(is_id, dtype=bool)
    n_id, n_ood = _check(scores, is_id)
    ranks = rankdata(scores, method="average")
    u_statistic = float(ranks[is_id].sum()) - n_id * (n_id + 1) / 2.0
    return u_statistic / (n_id * n_ood)


def auroc(samples: Sequence[BinaryScoredSample]) -> float:
    """P(score_id > score_ood) + 0.5 P(tie), from a single sort."""
    return auroc_from_arrays(*_split(samples))


def roc_curve_from_arrays(scores, is_id) -> List[Tuple[float, float]]:
    scores = np.asarray(scores, dtype=np.float64)
    is_id = np.asarray(is_id, dtype=bool)
    n_id, n_ood = _check(scores, is_id)

    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    tp = np.cumsum(is_id[order])
    fp = np.cumsum(~is_id[order])
    # last position of every distinct threshold
    ends = np.flatnonzero(np.append(sorted_scores[1:] != sorted_scores[:-1], True))

    points = [(0.0, 0.0)]
    points += [(float(fp[i]) / n_ood, float(tp[i]) / n_id) for i in ends]
    return points


def roc_curve(samples: Sequence[BinaryScoredSample]) -> List[Tuple[float, float]]:
    """(FPR, TPR) at every distinct threshold, from (0, 0) to (1, 1)."""
    return roc_curve_from_arrays(*_split(samples))


def trapezoid_area(points: Sequence[Tuple[float, float]]) -> float:
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
