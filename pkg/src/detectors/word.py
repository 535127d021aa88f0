"""
Word-level hallucination and omission features.

Token features are computed per side, aligned to regex-segmented words by
character overlap and aggregated to the worst token score per word.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import regex
import structlog

from ..core.types import AnnotatedSpan, Corpus, Side, TokenSpan, TranslationRecord
from ..utils.parallel import ordered_map

logger = structlog.get_logger(__name__)

HALLUC_FEATURES = ("logprob", "contrastive_logprob", "alti_total", "alti_max")
OMISSION_FEATURES = ("rev_logprob", "rev_contrastive_logprob", "alti_t_total", "alti_t_max")

_WORD_RE = regex.compile(r"[\p{L}\p{N}\p{M}]+|[^\s\p{L}\p{N}\p{M}]")
_HAN_WORD_RE = regex.compile(r"\p{Han}|(?:(?!\p{Han})[\p{L}\p{N}\p{M}])+|[^\s\p{L}\p{N}\p{M}]")


def side_features(side: Side) -> Tuple[str, ...]:
    return HALLUC_FEATURES if side == Side.TARGET else OMISSION_FEATURES


@dataclass(frozen=True)
class WordSpan:
    text: str
    start: int
    end: int
    index: int


@dataclass(frozen=True)
class OrphanWord:
    """A word no token overlaps; excluded from scoring."""

    record_id: str
    side: Side
    word_index: int
    word_text: str


@dataclass(frozen=True)
class TokenFeatureRow:
    record_id: str
    side: Side
    token_index: int
    features: Dict[str, float]


def segment_words(text: str, is_han: bool = False) -> List[WordSpan]:
    pattern = _HAN_WORD_RE if is_han else _WORD_RE
    return [WordSpan(m.group(), m.start(), m.end(), i) for i, m in enumerate(pattern.finditer(text))]


def _overlap_matrix(starts_a, ends_a, starts_b, ends_b) -> np.ndarray:
    starts_a, ends_a = np.asarray(starts_a)[:, None], np.asarray(ends_a)[:, None]
    starts_b, ends_b = np.asarray(starts_b)[None, :], np.asarray(ends_b)[None, :]
    return np.maximum(starts_a, starts_b) < np.minimum(ends_a, ends_b)


def align_tokens_to_words(
    tokens: Sequence[TokenSpan], words: Sequence[WordSpan]
) -> Tuple[Dict[int, List[int]], List[int]]:
    """Map word index to overlapping token indices; also return the orphan word indices."""
    if not words:
        return {}, []
    if not tokens:
        return {}, [w.index for w in words]
    overlap = _overlap_matrix(
        [w.start for w in words], [w.end for w in words], [t.start for t in tokens], [t.end for t in tokens]
    )
    mapping, orphans = {}, []
    for row, word in enumerate(words):
        hits = np.flatnonzero(overlap[row]).tolist()
        if hits:
            mapping[word.index] = hits
        else:
            orphans.append(word.index)
    return mapping, orphans


def token_features_halluc(record: TranslationRecord) -> List[TokenFeatureRow]:
    """Per target token: logprob, contrastive_logprob, alti_total, alti_max (higher = more hallucinated)."""
    n = len(record.tgt_tokens)
    columns: Dict[str, np.ndarray] = {}
    lp = np.asarray(record.tgt_logprob, dtype=np.float64)
    if len(lp) == n:
        columns["logprob"] = -lp
        if record.tgt_logprob_uncond is not None:
            columns["contrastive_logprob"] = -(lp - np.asarray(record.tgt_logprob_uncond))
    if record.alti is not None and record.alti.n_src > 0:
        columns["alti_total"] = -record.alti.row_sums
        columns["alti_max"] = -record.alti.entries.max(axis=1)
    return _rows(record.id, Side.TARGET, n, columns)


def token_features_omission(record: TranslationRecord) -> List[TokenFeatureRow]:
    """Per source token: alti_t_total, alti_t_max and, with reverse traces, rev_logprob features."""
    n = len(record.src_tokens)
    columns: Dict[str, np.ndarray] = {}
    if record.src_logprob_rev is not None:
        rev = np.asarray(record.src_logprob_rev, dtype=np.float64)
        columns["rev_logprob"] = -rev
        if record.src_logprob_rev_uncond is not None:
            columns["rev_contrastive_logprob"] = -(rev - np.asarray(record.src_logprob_rev_uncond))
    if record.alti is not None and record.alti.n_tgt > 0:
        columns["alti_t_total"] = -record.alti.col_sums
        columns["alti_t_max"] = -record.alti.entries.max(axis=0)
    return _rows(record.id, Side.SOURCE, n, columns)


def _rows(record_id: str, side: Side, n: int, columns: Dict[str, np.ndarray]) -> List[TokenFeatureRow]:
    ordered = [name for name in side_features(side) if name in columns]
    return [
        TokenFeatureRow(record_id, side, k, {name: float(columns[name][k]) for name in ordered}) for k in range(n)
    ]


def token_features(record: TranslationRecord, side: Side) -> List[TokenFeatureRow]:
    return token_features_halluc(record) if side == Side.TARGET else token_features_omission(record)


def aggregate_to_words(token_scores: Sequence[float], mapping: Dict[int, List[int]]) -> Dict[int, float]:
    """Worst (maximum) token score per word."""
    scores = np.asarray(token_scores, dtype=np.float64)
    return {word: float(scores[tokens].max()) for word, tokens in sorted(mapping.items())}


def gold_word_labels(spans: Sequence[AnnotatedSpan], words: Sequence[WordSpan]) -> List[int]:
    if not words:
        return []
    if not spans:
        return [0] * len(words)
    overlap = _overlap_matrix(
        [w.start for w in words], [w.end for w in words], [s.start for s in spans], [s.end for s in spans]
    )
    return overlap.any(axis=1).astype(int).tolist()


@dataclass(frozen=True)
class RecordWords:
    """Segmentation and alignment of one side of a record."""

    words: List[WordSpan]
    mapping: Dict[int, List[int]]
    orphans: List[int]
    labels: Optional[List[int]]


def record_words(record: TranslationRecord, side: Side) -> RecordWords:
    words = segment_words(record.text(side), record.direction.is_han(side))
    mapping, orphans = align_tokens_to_words(record.tokens(side), words)
    labels = None
    if record.annotation is not None:
        spans = record.annotation.halluc_spans if side == Side.TARGET else record.annotation.omission_spans
        labels = gold_word_labels(spans, words)
    return RecordWords(words, mapping, orphans, labels)


@dataclass(frozen=True)
class WordFeatureTable:
    frame: pd.DataFrame
    orphans: List[OrphanWord]


WORD_KEY_COLUMNS = ["id", "direction", "data_source", "side", "word_index", "word_text", "start", "end"]


def _record_word_rows(record: TranslationRecord, side: Side) -> Tuple[List[dict], List[OrphanWord]]:
    info = record_words(record, side)
    rows = token_features(record, side)
    names = side_features(side)
    matrix = np.array(
        [[row.features.get(name, np.nan) for name in names] for row in rows], dtype=np.float64
    ).reshape(len(rows), len(names))

    out = []
    for word in info.words:
        tokens = info.mapping.get(word.index)
        if tokens is None:
            continue
        item = {
            "id": record.id,
            "direction": str(record.direction),
            "data_source": record.data_source,
            "side": side.value,
            "word_index": word.index,
            "word_text": word.text,
            "start": word.start,
            "end": word.end,
        }
        for j, name in enumerate(names):
            column = matrix[tokens, j]
            item[name] = np.nan if np.isnan(column).all() else float(np.nanmax(column))
        item["gold_label"] = info.labels[word.index] if info.labels is not None else pd.NA
        out.append(item)
    orphans = [OrphanWord(record.id, side, i, info.words[i].text) for i in info.orphans]
    return out, orphans


def word_feature_table(corpus: Corpus, side: Side, threads: int = 1) -> WordFeatureTable:
    """Word-level feature table for one side, sorted by (id, word_index); orphan words listed separately."""
    records = sorted(corpus, key=lambda r: r.id)
    results = ordered_map(lambda r: _record_word_rows(r, side), records, threads)
    rows = [row for record_rows, _ in results for row in record_rows]
    orphans = [orphan for _, record_orphans in results for orphan in record_orphans]
    columns = WORD_KEY_COLUMNS + list(side_features(side)) + ["gold_label"]
    frame = pd.DataFrame(rows, columns=columns)
    frame["gold_label"] = frame["gold_label"].astype("Int64")
    if orphans:
        logger.warning("orphan_words", side=side.value, count=len(orphans))
    logger.info("word_table_built", side=side.value, records=len(records), words=len(frame))
    return WordFeatureTable(frame, orphans)
