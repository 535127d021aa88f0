"""
Trace-bundle ingestion, validation and corpus statistics.

A trace bundle is UTF-8 JSON Lines, one TranslationRecord per line with the
record's field names. Optional fields are omitted, never null. An annotation
overlay (same ids, annotation fields only) may be merged by id.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pydantic
import structlog
from pydantic import BaseModel, ConfigDict, Field

from ..utils.config import AnnotationConfig
from .errors import (
    CorpusValidationError,
    IoError,
    MalformedDirection,
    MarkupError,
    SchemaError,
    ValidationError,
)
from .markup import parse_span_markup
from .types import (
    AnnotatedSpan,
    Annotation,
    AttentionDistribution,
    Axis,
    ContributionMatrix,
    Corpus,
    Direction,
    Severity,
    Side,
    TokenSpan,
    TranslationRecord,
)

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]

ATTN_INGEST_TOL = 1e-4
ROW_SUM_TOL = 1e-6
IDENTITY_TOL = 1e-9


# Wire models


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TokenModel(_Strict):
    text: str
    start: int
    end: int


class SpanModel(_Strict):
    start: int
    end: int


class AnnotationModel(_Strict):
    halluc_severity: Union[int, str] = 0
    omission_severity: Union[int, str] = 0
    halluc_spans: List[SpanModel] = Field(default_factory=list)
    omission_spans: List[SpanModel] = Field(default_factory=list)
    incomprehensible: bool = False


class AttentionModel(_Strict):
    mass: List[float]
    has_eos: bool = False


class RecordModel(_Strict):
    id: str
    direction: str
    data_source: str
    src_text: str
    tgt_text: str
    src_tokens: List[TokenModel]
    tgt_tokens: List[TokenModel]
    tgt_logprob: List[float]
    tgt_logprob_uncond: Optional[List[float]] = None
    alti: Optional[List[List[float]]] = None
    attn: Optional[AttentionModel] = None
    src_logprob_rev: Optional[List[float]] = None
    src_logprob_rev_uncond: Optional[List[float]] = None
    embeddings: Optional[Dict[str, Tuple[List[float], List[float]]]] = None
    external_scores: Optional[Dict[str, float]] = None
    annotation: Optional[AnnotationModel] = None
    selection_strategy: Optional[str] = None


class OverlayModel(_Strict):
    """One overlay line: either a nested annotation or flat fields with marked texts."""

    id: str
    annotation: Optional[AnnotationModel] = None
    halluc_severity: Union[int, str, None] = None
    omission_severity: Union[int, str, None] = None
    incomprehensible: bool = False
    src_marked: Optional[str] = None
    tgt_marked: Optional[str] = None


# Conversion


def _tuple(values: Optional[Sequence[float]]) -> Optional[Tuple[float, ...]]:
    return None if values is None else tuple(float(v) for v in values)


def _annotation_from_model(model: AnnotationModel, config: AnnotationConfig) -> Annotation:
    return Annotation(
        halluc_severity=Severity.parse(model.halluc_severity, config.label_map),
        omission_severity=Severity.parse(model.omission_severity, config.label_map),
        halluc_spans=tuple(AnnotatedSpan(s.start, s.end, Side.TARGET) for s in model.halluc_spans),
        omission_spans=tuple(AnnotatedSpan(s.start, s.end, Side.SOURCE) for s in model.omission_spans),
        incomprehensible=model.incomprehensible,
    )


def _record_from_model(model: RecordModel, line: int, config: AnnotationConfig) -> TranslationRecord:
    try:
        direction = Direction.parse(model.direction)
    except MalformedDirection as exc:
        raise SchemaError(line, "direction", str(exc)) from exc
    annotation = None
    if model.annotation is not None:
        try:
            annotation = _annotation_from_model(model.annotation, config)
        except ValueError as exc:
            raise SchemaError(line, "annotation", str(exc)) from exc
    if model.alti is not None and len({len(row) for row in model.alti}) > 1:
        raise SchemaError(line, "alti", "rows of unequal length")
    embeddings = None
    if model.embeddings is not None:
        embeddings = {name: (tuple(src), tuple(tgt)) for name, (src, tgt) in model.embeddings.items()}
    return TranslationRecord(
        id=model.id,
        direction=direction,
        data_source=model.data_source,
        src_text=model.src_text,
        tgt_text=model.tgt_text,
        src_tokens=tuple(TokenSpan(t.text, t.start, t.end) for t in model.src_tokens),
        tgt_tokens=tuple(TokenSpan(t.text, t.start, t.end) for t in model.tgt_tokens),
        tgt_logprob=_tuple(model.tgt_logprob),
        tgt_logprob_uncond=_tuple(model.tgt_logprob_uncond),
        alti=None if model.alti is None else ContributionMatrix(np.array(model.alti, dtype=np.float64)),
        attn=None if model.attn is None else AttentionDistribution(np.array(model.attn.mass), model.attn.has_eos),
        src_logprob_rev=_tuple(model.src_logprob_rev),
        src_logprob_rev_uncond=_tuple(model.src_logprob_rev_uncond),
        embeddings=embeddings,
        external_scores=None if model.external_scores is None else dict(model.external_scores),
        annotation=annotation,
        selection_strategy=model.selection_strategy,
    )


def _parse_line(text: str, line: int, model: type) -> Any:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(line, "(json)", exc.msg) from exc
    if not isinstance(payload, dict):
        raise SchemaError(line, "(root)", "expected a JSON object")
    for key, value in payload.items():
        if value is None:
            raise SchemaError(line, key, "null value; omit optional fields instead")
    try:
        return model.model_validate(payload)
    except pydantic.ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "(root)"
        raise SchemaError(line, where, first["msg"]) from exc


def record_to_dict(record: TranslationRecord) -> Dict[str, Any]:
    """Wire form of a record; optional fields that are None are omitted."""
    payload: Dict[str, Any] = {
        "id": record.id,
        "direction": str(record.direction),
        "data_source": record.data_source,
        "src_text": record.src_text,
        "tgt_text": record.tgt_text,
        "src_tokens": [{"text": t.text, "start": t.start, "end": t.end} for t in record.src_tokens],
        "tgt_tokens": [{"text": t.text, "start": t.start, "end": t.end} for t in record.tgt_tokens],
        "tgt_logprob": list(record.tgt_logprob),
    }
    if record.tgt_logprob_uncond is not None:
        payload["tgt_logprob_uncond"] = list(record.tgt_logprob_uncond)
    if record.alti is not None:
        payload["alti"] = record.alti.to_lists()
    if record.attn is not None:
        payload["attn"] = {"mass": record.attn.mass.tolist(), "has_eos": record.attn.has_eos}
    if record.src_logprob_rev is not None:
        payload["src_logprob_rev"] = list(record.src_logprob_rev)
    if record.src_logprob_rev_uncond is not None:
        payload["src_logprob_rev_uncond"] = list(record.src_logprob_rev_uncond)
    if record.embeddings is not None:
        payload["embeddings"] = {k: [list(src), list(tgt)] for k, (src, tgt) in sorted(record.embeddings.items())}
    if record.external_scores is not None:
        payload["external_scores"] = dict(sorted(record.external_scores.items()))
    if record.annotation is not None:
        ann = record.annotation
        payload["annotation"] = {
            "halluc_severity": ann.halluc_severity.label(Axis.HALLUCINATION),
            "omission_severity": ann.omission_severity.label(Axis.OMISSION),
            "halluc_spans": [{"start": s.start, "end": s.end} for s in ann.halluc_spans],
            "omission_spans": [{"start": s.start, "end": s.end} for s in ann.omission_spans],
            "incomprehensible": ann.incomprehensible,
        }
    if record.selection_strategy is not None:
        payload["selection_strategy"] = record.selection_strategy
    return payload


def dump_corpus(corpus: Corpus, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for record in corpus:
            fh.write(json.dumps(record_to_dict(record), ensure_ascii=False))
            fh.write("\n")


# Validation


def _check_tokens(name: str, tokens: Sequence[TokenSpan], text: str) -> List[str]:
    violations = []
    for k, tok in enumerate(tokens):
        if not 0 <= tok.start < tok.end <= len(text):
            violations.append(f"{name}[{k}]: offsets [{tok.start},{tok.end}) invalid for text of length {len(text)}")
        elif text[tok.start : tok.end] != tok.text:
            violations.append(f"{name}[{k}]: token text {tok.text!r} != text slice {text[tok.start:tok.end]!r}")
    return violations


def _check_logprobs(name: str, values: Optional[Sequence[float]], expected: int, what: str) -> List[str]:
    if values is None:
        return []
    violations = []
    if len(values) != expected:
        violations.append(f"{name}: length {len(values)} != {expected} {what}")
    for k, value in enumerate(values):
        if not math.isfinite(value):
            violations.append(f"{name}[{k}]: non-finite log-probability")
        elif value > 0:
            violations.append(f"{name}[{k}]: positive log-probability")
    return violations


def _check_alti(matrix: ContributionMatrix, n_tgt: int, n_src: int) -> List[str]:
    entries = matrix.entries
    if entries.ndim != 2 or entries.shape != (n_tgt, n_src):
        return [f"alti: shape {'x'.join(map(str, entries.shape))} != {n_tgt}x{n_src} (target x source tokens)"]
    violations = []
    if not np.all(np.isfinite(entries)):
        violations.append("alti: non-finite entry")
        return violations
    negative = np.argwhere(entries < 0)
    if len(negative):
        i, j = negative[0]
        violations.append(f"alti: negative entry at [{i},{j}]")
    rows = matrix.row_sums
    for i in np.flatnonzero(rows > 1 + ROW_SUM_TOL):
        violations.append(f"alti: row {i} sums to {rows[i]:.6g} > 1+1e-6")
    if n_tgt and n_src:
        lhs = n_tgt * float(rows.mean())
        rhs = n_src * float(matrix.col_sums.mean())
        if abs(lhs - rhs) > IDENTITY_TOL * max(1.0, abs(lhs)):
            violations.append("alti: row/column mass identity violated")
    return violations


def _check_attn(attn: AttentionDistribution, n_src: int) -> List[str]:
    expected = n_src + (1 if attn.has_eos else 0)
    if len(attn) != expected:
        eos = " + EOS" if attn.has_eos else ""
        return [f"attn: {len(attn)} positions != {n_src} source tokens{eos}"]
    if not np.all(np.isfinite(attn.mass)):
        return ["attn: non-finite mass"]
    violations = []
    if np.any(attn.mass < 0):
        violations.append("attn: negative mass")
    total = attn.total
    if abs(total - 1.0) > ATTN_INGEST_TOL:
        violations.append(f"attn: mass sums to {total:.6g}, expected 1±1e-4")
    return violations


def _check_spans(name: str, spans: Sequence[AnnotatedSpan], text: str, side: Side) -> List[str]:
    violations = []
    previous_end = -1
    for k, span in enumerate(spans):
        if span.side != side:
            violations.append(f"annotation: {name}[{k}] is on the {span.side.value} side")
        if not 0 <= span.start < span.end <= len(text):
            violations.append(f"annotation: {name}[{k}] [{span.start},{span.end}) outside {side.value} text")
        if span.start < previous_end:
            violations.append(f"annotation: {name}[{k}] overlaps or precedes the previous span")
        previous_end = max(previous_end, span.end)
    return violations


def _check_annotation(record: TranslationRecord) -> List[str]:
    ann = record.annotation
    if ann is None:
        return []
    violations = _check_spans("halluc_spans", ann.halluc_spans, record.tgt_text, Side.TARGET)
    violations += _check_spans("omission_spans", ann.omission_spans, record.src_text, Side.SOURCE)
    if ann.incomprehensible:
        return violations
    for name, severity, spans in (
        ("halluc", ann.halluc_severity, ann.halluc_spans),
        ("omission", ann.omission_severity, ann.omission_spans),
    ):
        if (severity == Severity.NONE) != (len(spans) == 0):
            violations.append(
                f"annotation: {name}_severity {severity.display_name} inconsistent with {len(spans)} span(s)"
            )
    return violations


def validate_record(record: TranslationRecord) -> List[str]:
    """Every broken record invariant as one message naming the field and the rule."""
    n_src, n_tgt = len(record.src_tokens), len(record.tgt_tokens)
    violations: List[str] = []
    violations += _check_tokens("src_tokens", record.src_tokens, record.src_text)
    violations += _check_tokens("tgt_tokens", record.tgt_tokens, record.tgt_text)
    violations += _check_logprobs("tgt_logprob", record.tgt_logprob, n_tgt, "target tokens")
    violations += _check_logprobs("tgt_logprob_uncond", record.tgt_logprob_uncond, n_tgt, "target tokens")
    violations += _check_logprobs("src_logprob_rev", record.src_logprob_rev, n_src, "source tokens")
    violations += _check_logprobs("src_logprob_rev_uncond", record.src_logprob_rev_uncond, n_src, "source tokens")
    if record.alti is not None:
        violations += _check_alti(record.alti, n_tgt, n_src)
    if record.attn is not None:
        violations += _check_attn(record.attn, n_src)
    for name, (src, tgt) in sorted((record.embeddings or {}).items()):
        if len(src) == 0 or len(tgt) == 0:
            violations.append(f"embeddings[{name}]: empty vector")
        elif len(src) != len(tgt):
            violations.append(f"embeddings[{name}]: dimensions {len(src)} and {len(tgt)} differ")
        elif not all(math.isfinite(v) for v in (*src, *tgt)):
            violations.append(f"embeddings[{name}]: non-finite value")
    for name, value in sorted((record.external_scores or {}).items()):
        if not math.isfinite(value):
            violations.append(f"external_scores[{name}]: non-finite value")
    violations += _check_annotation(record)
    return violations


# Overlay


def _overlay_annotation(
    overlay: OverlayModel, record: TranslationRecord, config: AnnotationConfig
) -> Tuple[Optional[Annotation], List[str]]:
    if overlay.annotation is not None:
        return _annotation_from_model(overlay.annotation, config), []

    violations = []
    spans: Dict[Side, List[AnnotatedSpan]] = {Side.SOURCE: [], Side.TARGET: []}
    for side, marked, field_name in (
        (Side.SOURCE, overlay.src_marked, "src_marked"),
        (Side.TARGET, overlay.tgt_marked, "tgt_marked"),
    ):
        if marked is None:
            continue
        try:
            plain, found = parse_span_markup(marked, config.open_delimiter, config.close_delimiter, side)
        except MarkupError as exc:
            violations.append(f"annotation: {type(exc).__name__} in {field_name} ({exc})")
            continue
        if plain != record.text(side):
            text_field = "src_text" if side == Side.SOURCE else "tgt_text"
            violations.append(f"annotation: {field_name} differs from {text_field}")
            continue
        spans[side] = found
    annotation = Annotation(
        halluc_severity=Severity.parse(overlay.halluc_severity or 0, config.label_map),
        omission_severity=Severity.parse(overlay.omission_severity or 0, config.label_map),
        halluc_spans=tuple(spans[Side.TARGET]),
        omission_spans=tuple(spans[Side.SOURCE]),
        incomprehensible=overlay.incomprehensible,
    )
    return annotation, violations


def _read_lines(path: Path) -> List[Tuple[int, str]]:
    try:
        with path.open("r", encoding="utf-8") as fh:
            return [(n, line) for n, line in enumerate(fh, start=1) if line.strip()]
    except FileNotFoundError as exc:
        raise IoError(str(path), "file not found") from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise IoError(str(path), str(exc)) from exc


def load_corpus(
    path: PathLike,
    overlay: Optional[PathLike] = None,
    config: Optional[AnnotationConfig] = None,
) -> Corpus:
    """Load a trace bundle; every record must pass validate_record."""
    config = config or AnnotationConfig()
    path = Path(path)
    records: List[TranslationRecord] = []
    for line, text in _read_lines(path):
        records.append(_record_from_model(_parse_line(text, line, RecordModel), line, config))

    extra: Dict[str, List[str]] = {}
    if overlay is not None:
        records, extra = _merge_overlay(records, Path(overlay), config)

    failures: List[ValidationError] = []
    seen = set()
    for record in records:
        violations = list(extra.get(record.id, []))
        if record.id in seen:
            violations.append("id: duplicate record id")
        seen.add(record.id)
        violations += validate_record(record)
        if violations:
            failures.append(ValidationError(record.id, violations))
    if failures:
        logger.warning("corpus_invalid", path=str(path), invalid_records=len(failures))
        raise CorpusValidationError(failures)

    corpus = Corpus(tuple(records))
    logger.info("corpus_loaded", path=str(path), records=len(corpus), strata=len(corpus.manifest))
    return corpus


def _merge_overlay(
    records: List[TranslationRecord], path: Path, config: AnnotationConfig
) -> Tuple[List[TranslationRecord], Dict[str, List[str]]]:
    by_id = {r.id: i for i, r in enumerate(records)}
    merged = list(records)
    extra: Dict[str, List[str]] = {}
    unknown = discarded = 0
    for line, text in _read_lines(path):
        item = _parse_line(text, line, OverlayModel)
        if item.id not in by_id:
            unknown += 1
            continue
        index = by_id[item.id]
        try:
            annotation, violations = _overlay_annotation(item, merged[index], config)
        except ValueError as exc:
            raise SchemaError(line, "annotation", str(exc)) from exc
        if violations and config.discard_invalid:
            discarded += 1
            annotation, violations = None, []
        if violations:
            extra[item.id] = violations
        merged[index] = merged[index].with_annotation(annotation)
    if unknown:
        logger.warning("overlay_unknown_ids", path=str(path), count=unknown)
    if discarded:
        logger.info("annotations_discarded", path=str(path), count=discarded)
    return merged, extra


def filter_evaluable(corpus: Corpus) -> Corpus:
    """Drop unannotated and incomprehensible records, keeping order."""
    kept = corpus.filter(lambda r: r.is_evaluable)
    logger.info("filtered_evaluable", kept=len(kept), dropped=len(corpus) - len(kept))
    return kept


# Statistics


@dataclass(frozen=True)
class DirectionStats:
    direction: str
    n_records: int
    hallucination: Dict[Severity, int]
    omission: Dict[Severity, int]

    def counts(self, axis: Axis) -> Dict[Severity, int]:
        return self.hallucination if axis == Axis.HALLUCINATION else self.omission

    def rates(self, axis: Axis) -> Dict[Severity, float]:
        return {severity: count / self.n_records for severity, count in self.counts(axis).items()}

    def rate_at_least(self, axis: Axis, level: Severity) -> float:
        hits = sum(count for severity, count in self.counts(axis).items() if severity >= level)
        return hits / self.n_records


def _counts(levels: Sequence[Severity]) -> Dict[Severity, int]:
    return {severity: sum(1 for s in levels if s == severity) for severity in Severity}


def corpus_stats(corpus: Corpus) -> Dict[str, DirectionStats]:
    """Per-direction share of records at each severity; directions without annotations are absent."""
    grouped: Dict[str, List[Annotation]] = {}
    for record in corpus:
        if record.is_evaluable:
            grouped.setdefault(str(record.direction), []).append(record.annotation)
    stats = {}
    for direction in sorted(grouped):
        annotations = grouped[direction]
        stats[direction] = DirectionStats(
            direction=direction,
            n_records=len(annotations),
            hallucination=_counts([a.halluc_severity for a in annotations]),
            omission=_counts([a.omission_severity for a in annotations]),
        )
    return stats


def stats_rows(stats: Mapping[str, DirectionStats]) -> List[Dict[str, Any]]:
    """Flat rows for printing or CSV export."""
    rows = []
    for direction, item in stats.items():
        row: Dict[str, Any] = {"direction": direction, "records": item.n_records}
        for axis in Axis:
            for severity, rate in item.rates(axis).items():
                row[f"{axis.value}_{severity.display_name.lower()}"] = rate
        rows.append(row)
    return rows
