"""
Group-wise k-fold cross-validation for the word-level feature combination.
"""

from collections import Counter
from dataclasses import dataclass
from typing import Dict, Hashable, List, Optional, Sequence

import numpy as np
import pandas as pd
import structlog

from ..core.errors import MissingFeature, NonBinaryLabels, TooFewGroups
from ..utils.config import CombinerConfig
from ..utils.parallel import ordered_map
from .logreg import LinearModel, fit_logreg

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class FoldAssignment:
    folds: Dict[Hashable, int]
    k: int

    def fold_of(self, group: Hashable) -> int:
        return self.folds[group]

    def row_folds(self, groups: Sequence[Hashable]) -> np.ndarray:
        return np.array([self.folds[g] for g in groups], dtype=np.int64)


def assign_folds(groups: Sequence[Hashable], k: int, seed: int) -> FoldAssignment:
    """Shuffle the distinct groups with the seed, then deal each to the fold holding the fewest rows."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    sizes = Counter(groups)
    unique = sorted(sizes)
    if len(unique) < k:
        raise TooFewGroups(f"{len(unique)} distinct groups for {k} folds")
    order = np.random.default_rng(seed).permutation(len(unique))
    loads = [0] * k
    folds: Dict[Hashable, int] = {}
    for i in order:
        group = unique[i]
        # least-loaded fold, not plain round-robin: row totals differ by at most one group size
        fold = min(range(k), key=lambda f: (loads[f], f))
        folds[group] = fold
        loads[fold] += sizes[group]
    return FoldAssignment(folds, k)


@dataclass
class CrossValResult:
    oof: np.ndarray
    model: LinearModel
    assignment: FoldAssignment
    fold_models: List[LinearModel]

    @property
    def unconverged_folds(self) -> List[int]:
        return [fold for fold, model in enumerate(self.fold_models) if not model.converged]

    @property
    def converged(self) -> bool:
        return self.model.converged and not self.unconverged_folds


def _check_rows(frame: pd.DataFrame, features: Sequence[str], label: str, key: Sequence[str]) -> None:
    missing_cols = [c for c in list(features) + [label] if c not in frame.columns]
    if missing_cols:
        raise MissingFeature([f"column {c}" for c in missing_cols])
    bad = frame[list(features) + [label]].isna().any(axis=1)
    if bad.any():
        offending = frame.loc[bad, [c for c in key if c in frame.columns]]
        raise MissingFeature([tuple(row) for row in offending.itertuples(index=False)])
    labels = frame[label].astype(float)
    if not labels.isin((0.0, 1.0)).all():
        raise NonBinaryLabels(f"{label} must be 0/1")


def crossval_combine(
    frame: pd.DataFrame,
    features: Sequence[str],
    seed: int,
    config: Optional[CombinerConfig] = None,
    label: str = "gold_label",
    group: str = "id",
    threads: int = 1,
) -> CrossValResult:
    """Out-of-fold log-odds for every row plus a final model fit on all rows."""
    config = config or CombinerConfig()
    features = list(features)
    _check_rows(frame, features, label, (group, "word_index"))
    X = frame[features].to_numpy(dtype=np.float64)
    y = frame[label].to_numpy(dtype=np.float64)
    groups = frame[group].tolist()
    assignment = assign_folds(groups, config.folds, seed)
    row_folds = assignment.row_folds(groups)

    def run_fold(fold: int) -> LinearModel:
        train = row_folds != fold
        return fit_logreg(X[train], y[train], config.lam, config.tol, config.max_iter, features, seed=seed)

    fold_models = ordered_map(run_fold, range(config.folds), threads)
    oof = np.empty(len(frame), dtype=np.float64)
    for fold, model in enumerate(fold_models):
        test = row_folds == fold
        oof[test] = model.decision_function(X[test])

    final = fit_logreg(X, y, config.lam, config.tol, config.max_iter, features, seed=seed)
    logger.info(
        "crossval_combined",
        rows=len(frame),
        groups=len(assignment.folds),
        folds=config.folds,
        features=features,
    )
    result = CrossValResult(oof, final, assignment, fold_models)
    if not result.converged:
        logger.warning(
            "crossval_not_converged",
            folds=result.unconverged_folds,
            final_converged=final.converged,
        )
    return result
