"""
Detection tasks and per-direction evaluation.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, List, Optional

import numpy as np
import pandas as pd
import structlog

from ..core.errors import EmptyTask, MissingScores, NoEvaluableDirections
from ..core.types import Corpus, Direction, Severity, Side
from ..detectors.word import record_words
from ..utils.config import DEFAULT_HIGH_RESOURCE
from .metrics import pairwise_ranking_score

logger = structlog.get_logger(__name__)

MEAN_ROW = "mean"
NON_SCORE_COLUMNS = frozenset(
    {"id", "direction", "data_source", "side", "word_index", "word_text", "start", "end", "gold_label"}
)


class TaskId(str, Enum):
    SENT_HALLUC = "sent_halluc"
    SENT_OMISSION = "sent_omission"
    SENT_PATHOLOGY = "sent_pathology"
    WORD_HALLUC = "word_halluc"
    WORD_OMISSION = "word_omission"

    @property
    def is_word_level(self) -> bool:
        return self in (TaskId.WORD_HALLUC, TaskId.WORD_OMISSION)

    @property
    def side(self) -> Side:
        return Side.SOURCE if self == TaskId.WORD_OMISSION else Side.TARGET

    @property
    def key_columns(self) -> List[str]:
        return ["id", "word_index"] if self.is_word_level else ["id"]


def build_task(corpus: Corpus, task: TaskId) -> pd.DataFrame:
    """Labeled instances: id, direction, data_source, [word_index, word_text,] label."""
    task = TaskId(task)
    rows = []
    for record in sorted(corpus, key=lambda r: r.id):
        if not record.is_evaluable:
            continue
        ann = record.annotation
        base = {"id": record.id, "direction": str(record.direction), "data_source": record.data_source}
        if task == TaskId.SENT_HALLUC:
            rows.append({**base, "label": int(ann.halluc_severity)})
        elif task == TaskId.SENT_OMISSION:
            if ann.halluc_severity == Severity.NONE:
                rows.append({**base, "label": int(ann.omission_severity)})
        elif task == TaskId.SENT_PATHOLOGY:
            rows.append({**base, "label": int(ann.pathology_severity)})
        else:
            info = record_words(record, task.side)
            for word in info.words:
                if word.index in info.mapping:
                    rows.append(
                        {**base, "word_index": word.index, "word_text": word.text, "label": info.labels[word.index]}
                    )
    columns = ["id", "direction", "data_source"]
    if task.is_word_level:
        columns += ["word_index", "word_text"]
    frame = pd.DataFrame(rows, columns=columns + ["label"])
    if frame.empty:
        raise EmptyTask(f"{task.value}: no annotated instances")
    for direction in corpus.directions():
        if direction not in set(frame["direction"]):
            logger.warning("task_empty_for_direction", task=task.value, direction=direction)
    return frame


@dataclass
class EvalResult:
    task: str
    detector: str
    scores: Dict[str, float]
    counts: Dict[str, int]
    excluded: List[str]
    mean: float
    mean_high_resource: Optional[float] = None
    mean_low_resource: Optional[float] = None
    n_missing: int = 0

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "detector": self.detector,
            "scores": dict(self.scores),
            "counts": dict(self.counts),
            "excluded": list(self.excluded),
            "mean": self.mean,
            "mean_high_resource": self.mean_high_resource,
            "mean_low_resource": self.mean_low_resource,
            "n_missing": self.n_missing,
        }


def _mean(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def evaluate_instances(
    instances: pd.DataFrame,
    scores: pd.Series,
    task: TaskId,
    detector: str,
    high_resource: FrozenSet[str] = frozenset(DEFAULT_HIGH_RESOURCE),
) -> EvalResult:
    """Metric per direction over task instances joined with detector scores."""
    task = TaskId(task)
    keys = task.key_columns
    joined = instances.join(scores.rename("score"), on=keys if len(keys) > 1 else keys[0])
    missing = joined["score"].isna()
    if missing.all():
        raise MissingScores(f"{detector}: no scores for any {task.value} instance")
    if missing.any():
        logger.warning("instances_without_scores", detector=detector, task=task.value, count=int(missing.sum()))
    joined = joined[~missing]

    per_direction: Dict[str, float] = {}
    counts: Dict[str, int] = {}
    excluded: List[str] = []
    for direction, group in joined.groupby("direction", sort=True):
        counts[direction] = len(group)
        if group["label"].nunique() < 2:
            excluded.append(direction)
            continue
        per_direction[direction] = pairwise_ranking_score(group["score"].to_numpy(), group["label"].to_numpy())
    if excluded:
        logger.info("directions_excluded", detector=detector, task=task.value, directions=excluded)
    if not per_direction:
        raise NoEvaluableDirections(f"{detector}/{task.value}: every direction has a single label class")

    high = [v for d, v in per_direction.items() if Direction.parse(d).is_high_resource(high_resource)]
    low = [v for d, v in per_direction.items() if not Direction.parse(d).is_high_resource(high_resource)]
    return EvalResult(
        task=task.value,
        detector=detector,
        scores=per_direction,
        counts=counts,
        excluded=excluded,
        mean=float(np.mean(list(per_direction.values()))),
        mean_high_resource=_mean(high),
        mean_low_resource=_mean(low),
        n_missing=int(missing.sum()),
    )


def evaluate(
    corpus: Corpus,
    detector: str,
    task: TaskId,
    scores: pd.Series,
    high_resource: FrozenSet[str] = frozenset(DEFAULT_HIGH_RESOURCE),
) -> EvalResult:
    """Evaluate one detector; scores are indexed by id, or by (id, word_index) for word tasks."""
    return evaluate_instances(build_task(corpus, task), scores, task, detector, high_resource)


def score_series(table: pd.DataFrame, detector: str, task: TaskId) -> pd.Series:
    keys = TaskId(task).key_columns
    return table.set_index(keys if len(keys) > 1 else keys[0])[detector]


def evaluate_table(
    corpus: Corpus,
    table: pd.DataFrame,
    task: TaskId,
    detectors: Optional[List[str]] = None,
    high_resource: FrozenSet[str] = frozenset(DEFAULT_HIGH_RESOURCE),
) -> List[EvalResult]:
    """Evaluate every detector column of a score table on one task."""
    task = TaskId(task)
    instances = build_task(corpus, task)
    if detectors is None:
        detectors = [c for c in table.columns if c not in NON_SCORE_COLUMNS]
    return [
        evaluate_instances(instances, score_series(table, d, task), task, d, high_resource) for d in detectors
    ]


def results_matrix(results: List[EvalResult]) -> pd.DataFrame:
    """Directions x detectors, plus a final mean row; excluded cells are empty."""
    directions = sorted({d for r in results for d in r.counts})
    data = {"direction": directions + [MEAN_ROW]}
    for result in results:
        data[result.detector] = [result.scores.get(d, np.nan) for d in directions] + [result.mean]
    return pd.DataFrame(data)

