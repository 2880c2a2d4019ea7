"""
Voxel-level ROC analysis.

AUC follows the Mann-Whitney formulation with half credit for ties: the
fraction of (positive, negative) pairs in which the positive scores higher,
plus half the tied pairs.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from cdis_volume.errors import UndefinedAucError, ValidationError
from cdis_volume.volume import MaskVolume, ScalarVolume, require_same_shape

logger = logging.getLogger(__name__)


def _check_inputs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.size != labels.size:
        raise ValidationError(f"scores and labels differ in length ({scores.size} vs {labels.size})")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValidationError("labels may only contain 0 and 1")
    labels = labels.astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise UndefinedAucError(
            f"AUC is undefined with {n_pos} positive and {labels.size - n_pos} negative samples"
        )
    return scores, labels


def auc(scores, labels) -> float:
    """Tie-corrected AUC from one sort-and-rank pass, O(n log n)."""
    scores, labels = _check_inputs(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    ranks = rankdata(scores, method="average")
    u_statistic = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def auc_bruteforce(scores, labels, chunk: int = 2048) -> float:
    """Pairwise O(n^2) count with the same contract as auc(); a test oracle for n <= 1e4."""
    scores, labels = _check_inputs(scores, labels)
    positives = scores[labels]
    negatives = scores[~labels]
    wins = 0
    ties = 0
    for start in range(0, positives.size, chunk):
        block = positives[start:start + chunk, None]
        wins += int(np.count_nonzero(block > negatives[None, :]))
        ties += int(np.count_nonzero(block == negatives[None, :]))
    return float((wins + 0.5 * ties) / (positives.size * negatives.size))


@dataclass(frozen=True)
class RocResult:
    auc: float
    fpr: tuple[float, ...]
    tpr: tuple[float, ...]
    thresholds: tuple[float, ...]
    n_pos: int
    n_neg: int

    @property
    def curve(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr, self.tpr))

    def trapezoid_area(self) -> float:
        fpr = np.asarray(self.fpr)
        tpr = np.asarray(self.tpr)
        return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))

    def to_csv_rows(self) -> list[list]:
        """Rows of (threshold, fpr, tpr), header first; the origin carries threshold inf."""
        rows = [["threshold", "fpr", "tpr"]]
        rows.extend([repr(t), repr(f), repr(p)] for t, f, p in zip(self.thresholds, self.fpr, self.tpr))
        return rows

    def summary(self) -> dict:
        return {"auc": self.auc, "n_pos": self.n_pos, "n_neg": self.n_neg, "n_points": len(self.fpr)}


def roc_curve(scores, labels) -> RocResult:
    """
    ROC curve swept over every distinct score, highest first.

    Tied scores form a single point, so the trapezoidal area under the curve
    equals the tie-corrected AUC.
    """
    scores, labels = _check_inputs(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos

    order = np.argsort(scores, kind="mergesort")[::-1]
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    group_ends = np.r_[np.flatnonzero(np.diff(sorted_scores) != 0), sorted_scores.size - 1]

    true_positives = np.cumsum(sorted_labels)[group_ends]
    false_positives = (group_ends + 1) - true_positives

    result = RocResult(
        auc=auc(scores, labels),
        fpr=tuple(np.r_[0.0, false_positives / n_neg].tolist()),
        tpr=tuple(np.r_[0.0, true_positives / n_pos].tolist()),
        thresholds=tuple(np.r_[math.inf, sorted_scores[group_ends]].tolist()),
        n_pos=n_pos,
        n_neg=n_neg,
    )
    logger.debug("ROC curve with %d points, AUC %.6f", len(result.fpr), result.auc)
    return result


def delineation_samples(modality: ScalarVolume, tumour: MaskVolume, breast: MaskVolume) -> tuple[np.ndarray, np.ndarray]:
    """Values at tumour-within-breast voxels (positives) and breast-minus-tumour voxels (negatives)."""
    require_same_shape(modality, tumour, breast)
    in_breast = breast.as_bool()
    in_tumour = tumour.as_bool()
    positives = modality.data[in_tumour & in_breast]
    negatives = modality.data[in_breast & ~in_tumour]
    if positives.size == 0 or negatives.size == 0:
        raise UndefinedAucError(
            f"Delineation AUC needs tumour and healthy breast voxels; "
            f"got {positives.size} tumour and {negatives.size} healthy voxels"
        )
    return positives, negatives


def auc_from_samples(positives: np.ndarray, negatives: np.ndarray) -> float:
    scores = np.concatenate([positives, negatives])
    labels = np.concatenate([np.ones(positives.size, dtype=np.uint8), np.zeros(negatives.size, dtype=np.uint8)])
    return auc(scores, labels)


def delineation_auc(modality: ScalarVolume, tumour: MaskVolume, breast: MaskVolume) -> float:
    """AUC of tumour against healthy breast tissue. An AUC below 0.5 is reported as is."""
    return auc_from_samples(*delineation_samples(modality, tumour, breast))
