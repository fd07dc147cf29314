"""Open-set evaluation: closed-set accuracy, AUROC, FPR at 95% TPR and OSCR.

Known samples are the positive class and carry higher scores when the
detector works. Threshold conventions are fixed so that ties are resolved
the same way everywhere:

* FPR@TPR counts a sample as accepted when ``score >= tau``;
* OSCR counts a sample as accepted when ``score > tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


def _nonempty(name: str, values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    return arr


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    if preds.shape != labels.shape:
        raise ValueError("preds and labels differ in length")
    return float(np.mean(preds == labels))


def auroc(known_scores, unknown_scores) -> float:
    """Mann-Whitney AUROC: P(known > unknown) + 0.5 * P(tie).

    Computed from integer counts; ``auroc(a, b) + auroc(b, a) == 1`` holds
    exactly in floating point.
    """
    k = _nonempty("known_scores", known_scores)
    u = np.sort(_nonempty("unknown_scores", unknown_scores))
    below = np.searchsorted(u, k, side="left")
    ties = np.searchsorted(u, k, side="right") - below
    twice_wins = int(2 * below.sum() + ties.sum())
    denom = 2 * k.size * u.size
    # evaluate the side <= 0.5 directly so the complement is exact
    if 2 * twice_wins <= denom:
        return twice_wins / denom
    return 1.0 - (denom - twice_wins) / denom


def fpr_at_tpr(known_scores, unknown_scores, tpr_target: float = 0.95) -> float:
    """Fraction of unknowns accepted at the highest threshold reaching the TPR.

    The threshold keeps at least ``ceil(tpr_target * n_known)`` known samples.
    """
    k = np.sort(_nonempty("known_scores", known_scores))[::-1]
    u = _nonempty("unknown_scores", unknown_scores)
    # guard against 0.95 * 20 landing a hair above 19 in binary
    need = math.ceil(tpr_target * k.size - 1e-9)
    if need <= 0:
        return 0.0
    tau = k[min(need, k.size) - 1]
    return float(np.count_nonzero(u >= tau)) / u.size


def oscr(known_scores, known_correct, unknown_scores) -> float:
    """Threshold-free OSCR: area under CCR vs FPR as the threshold sweeps down.

    The curve starts at (0, 0), visits the point for every distinct score and
    is extended horizontally to FPR = 1.
    """
    ks = _nonempty("known_scores", known_scores)
    us = _nonempty("unknown_scores", unknown_scores)
    correct = np.asarray(known_correct, dtype=bool).ravel()
    if correct.shape != ks.shape:
        raise ValueError("known_correct must match known_scores")

    thresholds = np.unique(np.concatenate([ks, us]))[::-1]
    ks_correct = np.sort(ks[correct])
    us_sorted = np.sort(us)
    # counts of scores strictly above each threshold
    ccr = (ks_correct.size - np.searchsorted(ks_correct, thresholds, side="right")) / ks.size
    fpr = (us_sorted.size - np.searchsorted(us_sorted, thresholds, side="right")) / us.size

    xs = np.concatenate([[0.0], fpr, [1.0]])
    ys = np.concatenate([[0.0], ccr, [ccr[-1]]])
    return float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2.0))


@dataclass
class MetricRow:
    accuracy: float
    auroc: Optional[float]
    fpr95: Optional[float]
    oscr: Optional[float]


def evaluate_scores(known_scores, known_preds, known_labels, unknown_scores,
                    tpr_target: float = 0.95) -> MetricRow:
    """All four metrics for one score function on one split.

    Open-set metrics are ``None`` when there are no unknown samples.
    """
    acc = accuracy(known_preds, known_labels)
    if len(unknown_scores) == 0:
        return MetricRow(acc, None, None, None)
    correct = np.asarray(known_preds) == np.asarray(known_labels)
    return MetricRow(
        accuracy=acc,
        auroc=auroc(known_scores, unknown_scores),
        fpr95=fpr_at_tpr(known_scores, unknown_scores, tpr_target),
        oscr=oscr(known_scores, correct, unknown_scores),
    )
