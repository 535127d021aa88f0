"""
Candidate selection for annotation.

Three strategies pick records from a pool using detector score tables:
uniform sampling, sampling proportional to detector quantiles, and
round-robin worst-case picking.
"""

from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field

from ..core.errors import MissingScores, NotEnoughRecords
from ..core.types import Corpus

logger = structlog.get_logger(__name__)


class Strategy(str, Enum):
    UNIFORM = "uniform"
    QUANTILE = "quantile"
    WORST = "worst"


def _detector_frame(score_table: pd.DataFrame, detectors: Sequence[str], ids: Sequence[str]) -> pd.DataFrame:
    absent = [d for d in detectors if d not in score_table.columns]
    if absent:
        raise MissingScores(f"score table lacks detector column(s) {absent}")
    frame = score_table.set_index("id")[list(detectors)].reindex(list(ids))
    if frame.isna().any().any():
        lacking = frame.index[frame.isna().any(axis=1)].tolist()
        raise MissingScores(f"{len(lacking)} record(s) lack scores, e.g. {lacking[:5]}")
    return frame


def quantile_weights(
    score_table: pd.DataFrame, detectors: Sequence[str], ids: Optional[Sequence[str]] = None
) -> pd.Series:
    """Mean over detectors of rank/n (average rank on ties); indexed by id."""
    ids = list(ids) if ids is not None else score_table["id"].tolist()
    frame = _detector_frame(score_table, detectors, ids)
    quantiles = frame.rank(method="average") / len(frame)
    return quantiles.mean(axis=1).rename("weight")


def weighted_sample(
    ids: Sequence[str], weights: Sequence[float], n: int, rng: np.random.Generator
) -> List[str]:
    """Sequential draws without replacement, renormalizing after each draw."""
    pool = list(ids)
    w = np.asarray(weights, dtype=np.float64).copy()
    if n > len(pool):
        raise NotEnoughRecords(n, len(pool))
    picked = []
    for _ in range(n):
        i = int(rng.choice(len(pool), p=w / w.sum()))
        picked.append(pool.pop(i))
        w = np.delete(w, i)
    return picked


def worst_round_robin(score_table: pd.DataFrame, detectors: Sequence[str], ids: Sequence[str], n: int) -> List[str]:
    """Each detector in turn contributes its worst record not yet picked; ties go to the smaller id."""
    frame = _detector_frame(score_table, detectors, sorted(ids))
    if n > len(frame):
        raise NotEnoughRecords(n, len(frame))
    rankings = []
    for detector in detectors:
        order = sorted(frame.index, key=lambda rid: (-frame.at[rid, detector], rid))
        rankings.append(order)
    picked: List[str] = []
    seen = set()
    cursors = [0] * len(detectors)
    while len(picked) < n:
        for d, ranking in enumerate(rankings):
            if len(picked) >= n:
                break
            while ranking[cursors[d]] in seen:
                cursors[d] += 1
            rid = ranking[cursors[d]]
            picked.append(rid)
            seen.add(rid)
    return picked


def select(
    corpus: Corpus,
    score_table: Optional[pd.DataFrame],
    strategy: Strategy,
    n: int,
    seed: int,
    detectors: Sequence[str] = (),
    exclude: Iterable[str] = (),
    rng: Optional[np.random.Generator] = None,
) -> List[str]:
    """Exactly n distinct ids from the corpus, in selection order."""
    strategy = Strategy(strategy)
    excluded = set(exclude)
    pool = sorted(r.id for r in corpus if r.id not in excluded)
    if n > len(pool):
        raise NotEnoughRecords(n, len(pool))
    rng = rng if rng is not None else np.random.default_rng(seed)
    if strategy == Strategy.UNIFORM:
        picked = [pool[i] for i in rng.choice(len(pool), size=n, replace=False)]
    else:
        if score_table is None or not detectors:
            raise MissingScores(f"strategy {strategy.value} needs a score table and detectors")
        if strategy == Strategy.QUANTILE:
            weights = quantile_weights(score_table, detectors, pool)
            picked = weighted_sample(pool, weights.to_numpy(), n, rng)
        else:
            picked = worst_round_robin(score_table, detectors, pool, n)
    logger.info("records_selected", strategy=strategy.value, n=n, pool=len(pool), seed=seed)
    return picked


class PlanEntry(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    direction: str
    data_source: str
    uniform: int = Field(0, ge=0)
    quantile: int = Field(0, ge=0)
    worst: int = Field(0, ge=0)


class SelectionPlan(BaseModel):
    """Per-(direction, data_source) counts for each strategy."""

    model_config = ConfigDict(extra="forbid")

    entries: List[PlanEntry]


def execute_plan(
    corpus: Corpus,
    score_table: Optional[pd.DataFrame],
    plan: SelectionPlan,
    seed: int,
    detectors: Sequence[str] = (),
    exclude: Iterable[str] = (),
) -> pd.DataFrame:
    """Run every plan entry, worst first, then quantile, then uniform, never picking an id twice."""
    rng = np.random.default_rng(seed)
    taken = set(exclude)
    rows: List[Dict[str, str]] = []
    for entry in plan.entries:
        stratum = corpus.filter(lambda r: str(r.direction) == entry.direction and r.data_source == entry.data_source)
        for strategy, count in (
            (Strategy.WORST, entry.worst),
            (Strategy.QUANTILE, entry.quantile),
            (Strategy.UNIFORM, entry.uniform),
        ):
            if count == 0:
                continue
            ids = select(stratum, score_table, strategy, count, seed, detectors, taken, rng=rng)
            taken.update(ids)
            rows.extend(
                {
                    "id": rid,
                    "direction": entry.direction,
                    "data_source": entry.data_source,
                    "selection_strategy": strategy.value,
                }
                for rid in ids
            )
    return pd.DataFrame(rows, columns=["id", "direction", "data_source", "selection_strategy"])
