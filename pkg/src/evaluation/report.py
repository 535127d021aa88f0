"""Merging of evaluation matrices and detector-ranking agreement."""

from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd
import structlog

from ..utils.tables import read_csv
from .tasks import MEAN_ROW

logger = structlog.get_logger(__name__)


def load_matrices(paths: Sequence[Union[str, Path]]) -> Dict[str, pd.DataFrame]:
    """Evaluation matrices keyed by file stem."""
    return {Path(p).stem: read_csv(p) for p in paths}


def merge_matrices(matrices: Dict[str, pd.DataFrame]) -> pd.DataFrame:
    """Long table: source, direction, detector, score."""
    frames = []
    for source in sorted(matrices):
        long = matrices[source].melt(id_vars="direction", var_name="detector", value_name="score")
        long.insert(0, "source", source)
        frames.append(long)
    if not frames:
        return pd.DataFrame(columns=["source", "direction", "detector", "score"])
    return pd.concat(frames, ignore_index=True)


def mean_scores(matrix: pd.DataFrame) -> pd.Series:
    row = matrix.loc[matrix["direction"] == MEAN_ROW].drop(columns="direction")
    if row.empty:
        raise ValueError("evaluation matrix has no mean row")
    return row.iloc[0].astype(float)


def ranking_agreement(matrix_a: pd.DataFrame, matrix_b: pd.DataFrame) -> float:
    """Spearman correlation of detector mean scores over the detectors both matrices share."""
    a, b = mean_scores(matrix_a), mean_scores(matrix_b)
    common = [d for d in a.index if d in b.index]
    if len(common) < 2:
        raise ValueError("ranking agreement needs at least two shared detectors")
    rank_a, rank_b = a[common].rank(), b[common].rank()
    if rank_a.nunique() < 2 or rank_b.nunique() < 2:
        return float("nan")
    return float(np.corrcoef(rank_a.to_numpy(), rank_b.to_numpy())[0, 1])


def summary_rows(matrices: Dict[str, pd.DataFrame]) -> List[dict]:
    """Per source, the best detector by mean score."""
    rows = []
    for source in sorted(matrices):
        means = mean_scores(matrices[source]).dropna()
        if means.empty:
            continue
        rows.append({"source": source, "best_detector": means.idxmax(), "best_mean": float(means.max())})
    return rows
