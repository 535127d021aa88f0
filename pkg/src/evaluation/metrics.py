"""
Ranking metrics.

pairwise_ranking_score generalizes ROC AUC to ordinal labels: one minus the
share of cross-label pairs ranked the wrong way, ties counted as half.
"""

from typing import Sequence

import numpy as np
import pandas as pd

from ..core.errors import DegenerateLabels, NonBinaryLabels


def pair_counts(scores: Sequence[float], labels: Sequence[int]):
    """(incorrect, ties, total) over pairs with different labels, in O(n log n)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    _, score_rank = np.unique(scores, return_inverse=True)
    _, label_code = np.unique(labels, return_inverse=True)
    n_scores = int(score_rank.max()) + 1 if len(scores) else 0
    n_labels = int(label_code.max()) + 1 if len(labels) else 0

    # counts[r, l]: items with score rank r and label code l
    counts = np.zeros((n_scores, n_labels), dtype=np.int64)
    np.add.at(counts, (score_rank, label_code), 1)
    per_label = counts.sum(axis=0)

    above = per_label[None, :] - np.cumsum(counts, axis=0)
    above_lower = np.cumsum(above, axis=1) - above
    incorrect = int((counts * above_lower).sum())

    per_score = counts.sum(axis=1)
    ties = int(((per_score * per_score - (counts * counts).sum(axis=1)) // 2).sum())
    n = len(labels)
    total = int((n * n - int((per_label * per_label).sum())) // 2)
    return incorrect, ties, total


def pairwise_ranking_score(scores: Sequence[float], labels: Sequence[int]) -> float:
    incorrect, ties, total = pair_counts(scores, labels)
    if total == 0:
        raise DegenerateLabels("fewer than two distinct labels")
    return 1.0 - (2 * incorrect + ties) / (2 * total)


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC from average ranks; binary 0/1 labels."""
    scores = pd.Series(np.asarray(scores, dtype=np.float64))
    labels = np.asarray(labels)
    if not np.isin(labels, (0, 1)).all():
        raise NonBinaryLabels("roc_auc expects 0/1 labels")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("both classes are required")
    ranks = scores.rank(method="average").to_numpy()
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
