"""ROC-based decision threshold selection for shift flags.

Four-stage procedure: partition validation data by classifier correctness,
score every sample, build the exact-counting ROC over all candidate
thresholds, and pick the threshold maximizing Youden's J = TPR - FPR.
Convention throughout: score >= theta flags a sample as out-of-distribution,
and "positive" means misclassified.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRocError, DegenerateRocWarning, LengthMismatchError


@dataclass
class RocCurve:
    """ROC points ordered by increasing threshold, sentinels included.

    thresholds[0] = -inf (everything flagged, TPR = FPR = 1) and
    thresholds[-1] = +inf (nothing flagged, TPR = FPR = 0); TPR and FPR are
    nonincreasing along the array.
    """

    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    n_pos: int
    n_neg: int

    def __len__(self) -> int:
        return len(self.thresholds)


@dataclass
class ThresholdDecision:
    """Selected threshold with its Youden J statistic and source curve."""

    theta: float
    j_statistic: float
    curve: RocCurve

    def to_json(self) -> str:
        """Audit record: threshold, J and all curve points."""
        return json.dumps(
            {
                "theta": repr(self.theta),
                "j_statistic": self.j_statistic,
                "n_pos": self.curve.n_pos,
                "n_neg": self.curve.n_neg,
                "points": [
                    {"theta": repr(float(t)), "tpr": float(tp), "fpr": float(fp)}
                    for t, tp, fp in zip(self.curve.thresholds, self.curve.tpr, self.curve.fpr)
                ],
            },
            indent=2,
        )


def partition_by_correctness(predictions, labels):
    """Split indices into (incorrect, correct) — the shift-proxy positives and negatives.

    Emits DegenerateRocWarning when either side is empty; downstream ROC
    construction will then fail with DegenerateRocError.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise LengthMismatchError("predictions and labels must be 1-D and equal length")
    if predictions.size == 0:
        raise LengthMismatchError("empty inputs")
    wrong = predictions != labels
    positive = np.flatnonzero(wrong)
    negative = np.flatnonzero(~wrong)
    if len(positive) == 0 or len(negative) == 0:
        warnings.warn(
            "correctness partition has a single class; ROC will be degenerate",
            DegenerateRocWarning,
            stacklevel=2,
        )
    return positive, negative


def roc_curve(scores, is_positive) -> RocCurve:
    """Exact-counting ROC over candidate thresholds (sorted unique scores + sentinels)."""
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(is_positive, dtype=bool)
    if scores.shape != flags.shape or scores.ndim != 1:
        raise LengthMismatchError("scores and flags must be 1-D and equal length")
    n_pos = int(flags.sum())
    n_neg = int((~flags).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateRocError("need at least one positive and one negative sample")

    thresholds = np.concatenate(([-np.inf], np.unique(scores), [np.inf]))
    pos_sorted = np.sort(scores[flags])
    neg_sorted = np.sort(scores[~flags])
    # count of samples with score >= theta, exact (no interpolation)
    tp = n_pos - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = n_neg - np.searchsorted(neg_sorted, thresholds, side="left")
    return RocCurve(
        thresholds=thresholds,
        tpr=tp / n_pos,
        fpr=fp / n_neg,
        n_pos=n_pos,
        n_neg=n_neg,
    )


def youden_threshold(curve: RocCurve) -> ThresholdDecision:
    """Threshold maximizing J = TPR - FPR; ties resolved to the smallest theta.

    The smallest-theta tie rule flags more samples, preferring sensitivity.
    """
    if len(curve) == 0:
        raise DegenerateRocError("empty curve")
    j = curve.tpr - curve.fpr
    best = int(np.argmax(j))  # argmax takes the first maximum = smallest theta
    return ThresholdDecision(
        theta=float(curve.thresholds[best]),
        j_statistic=float(j[best]),
        curve=curve,
    )


def flag_ood(scores, theta: float) -> np.ndarray:
    """Boolean flags: score >= theta is flagged as out-of-distribution."""
    scores = np.asarray(scores, dtype=np.float64)
    return scores >= theta
