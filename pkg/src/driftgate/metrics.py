"""Classification metrics, the unified shift score, and AUROC diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, LengthMismatchError, UndefinedMetricError

DEFAULT_BETA = 0.5

METRIC_KINDS = ("accuracy", "f1")


@dataclass(frozen=True)
class OodScoreInputs:
    """Inputs to the unified shift score.

    id_value and ood_value are the same classification metric (accuracy or F1)
    evaluated on data deemed in-distribution vs out-of-distribution; beta
    weights ID performance against the ID-OOD gap.
    """

    id_value: float
    ood_value: float
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not 0.0 <= self.id_value <= 1.0:
            raise UndefinedMetricError(f"id_value must be in [0, 1], got {self.id_value}")
        if not 0.0 <= self.ood_value <= 1.0:
            raise UndefinedMetricError(f"ood_value must be in [0, 1], got {self.ood_value}")
        if self.beta <= 0:
            raise UndefinedMetricError(f"beta must be > 0, got {self.beta}")


def _check_binary(predictions, labels):
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise LengthMismatchError(
            f"predictions and labels differ in length: {predictions.shape} vs {labels.shape}"
        )
    if predictions.size == 0:
        raise EmptyInputError("empty predictions")
    for arr, name in ((predictions, "predictions"), (labels, "labels")):
        if not np.isin(arr, (0, 1)).all():
            raise UndefinedMetricError(f"{name} must be binary 0/1")
    return predictions, labels


def accuracy(predictions, labels) -> float:
    """Fraction of exact matches."""
    predictions, labels = _check_binary(predictions, labels)
    return float((predictions == labels).mean())


def f1(predictions, labels) -> float:
    """F1 for the positive class (label 1 = satisfactory).

    Defined as 0 when precision + recall = 0 (no true positives).
    """
    predictions, labels = _check_binary(predictions, labels)
    tp = int(((predictions == 1) & (labels == 1)).sum())
    fp = int(((predictions == 1) & (labels == 0)).sum())
    fn = int(((predictions == 0) & (labels == 1)).sum())
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 2.0 * tp / denom


def ood_score(inputs: OodScoreInputs) -> float:
    """Unified shift score: (beta*ID + ID - OOD) / (beta*ID + ID).

    Equals 1 - OOD / ((1 + beta) * ID). High when ID performance is strong and
    OOD performance collapses; may be negative when OOD exceeds (1+beta)*ID.

    Raises:
        UndefinedMetricError: id_value = 0 (zero denominator). Note the edge:
            ood_value = 0 yields score 1 regardless of how small id_value is.
    """
    if inputs.id_value == 0.0:
        raise UndefinedMetricError("shift score undefined for id_value = 0")
    denom = inputs.beta * inputs.id_value + inputs.id_value
    return (denom - inputs.ood_value) / denom


def auroc(scores, is_positive) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(is_positive, dtype=bool)
    if scores.shape != flags.shape:
        raise LengthMismatchError("scores and flags differ in length")
    n_pos = int(flags.sum())
    n_neg = int((~flags).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auroc needs both classes present")
    # midranks via sort; average ranks over tied groups
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum_pos = ranks[flags].sum()
    u_stat = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))
