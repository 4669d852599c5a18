"""ROC/AUC, Cohen's kappa and k-fold splitting."""

from __future__ import annotations

from collections import Counter
from collections.abc import Hashable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabels, LengthMismatch, TooFewSamples


def _binary_inputs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise LengthMismatch(f"{scores.size} scores but {labels.size} labels")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0/1")
    labels = labels.astype(np.int64)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise DegenerateLabels("AUC needs at least one positive and one negative label")
    return scores, labels


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2).

    Computed from mid-ranks (Mann-Whitney U), which is exact for ties.
    """
    scores, labels = _binary_inputs(scores, labels)
    ranks = rankdata(scores, method="average")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # one per point after the (0, 0) origin

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """One ROC point per distinct score threshold, from (0, 0) to (1, 1)."""
    scores, labels = _binary_inputs(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last index of each run of equal scores
    cut = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[cut]
    fp = np.cumsum(1 - y)[cut]
    n_pos, n_neg = tp[-1], fp[-1]
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    return RocCurve(fpr, tpr, s[cut])


def cohens_kappa(pred: Sequence[Hashable], truth: Sequence[Hashable]) -> float:
    """Chance-corrected agreement ``(p_o - p_e) / (1 - p_e)``.

    Two identical constant sequences give ``p_e = 1``; that case is defined
    as perfect agreement, 1.0.
    """
    pred, truth = list(pred), list(truth)
    if len(pred) != len(truth):
        raise LengthMismatch(f"{len(pred)} predictions but {len(truth)} reference labels")
    n = len(pred)
    if n == 0:
        raise LengthMismatch("kappa needs at least one rating pair")
    p_o = sum(a == b for a, b in zip(pred, truth)) / n
    cp, ct = Counter(pred), Counter(truth)
    p_e = sum(cp[c] * ct[c] for c in cp.keys() & ct.keys()) / (n * n)
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def kfold_split(n: int, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffle cut into ``k`` contiguous test blocks.

    Block sizes are floor(n/k) or ceil(n/k), larger blocks first. Index
    arrays are returned sorted.
    """
    if k < 2 or n < k:
        raise TooFewSamples(f"cannot make {k} folds from {n} samples")
    from .simulator import STREAM_FOLDS, make_rng

    perm = make_rng(seed, STREAM_FOLDS).permutation(n)
    folds = []
    for block in np.array_split(perm, k):
        test = np.sort(block)
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        folds.append((np.flatnonzero(mask), test))
    return folds
