"""
Domain types for translation records, annotations and model traces.

Records are immutable once built; numeric traces are stored as tuples or
read-only numpy arrays so a loaded corpus can be shared between threads.
"""

import re
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from .errors import DuplicateRecordId, MalformedDirection

HAN_SCRIPTS = frozenset({"Hans", "Hant", "Hani"})

_DIRECTION_RE = re.compile(r"^\s*([A-Za-z]{3})_([A-Za-z]{4})-([A-Za-z]{3})_([A-Za-z]{4})\s*$")


class Side(str, Enum):
    SOURCE = "source"
    TARGET = "target"


class Axis(str, Enum):
    HALLUCINATION = "hallucination"
    OMISSION = "omission"


@dataclass(frozen=True, order=True)
class Direction:
    """Translation direction such as eng_Latn-arb_Arab."""

    src_lang: str
    src_script: str
    tgt_lang: str
    tgt_script: str

    def __str__(self) -> str:
        return f"{self.src_lang}_{self.src_script}-{self.tgt_lang}_{self.tgt_script}"

    @classmethod
    def parse(cls, value: str) -> "Direction":
        match = _DIRECTION_RE.match(value)
        if match is None:
            raise MalformedDirection(value)
        src_lang, src_script, tgt_lang, tgt_script = match.groups()
        return cls(src_lang.lower(), src_script.title(), tgt_lang.lower(), tgt_script.title())

    def script(self, side: Side) -> str:
        return self.src_script if side == Side.SOURCE else self.tgt_script

    def is_han(self, side: Side) -> bool:
        return self.script(side) in HAN_SCRIPTS

    def is_high_resource(self, high_resource: frozenset) -> bool:
        return self.src_lang in high_resource and self.tgt_lang in high_resource


def parse_direction(value: str) -> Direction:
    return Direction.parse(value)


class Severity(IntEnum):
    """Ordered pathology level, annotated per axis."""

    NONE = 0
    WORD = 1
    PARTIAL = 2
    FULL = 3

    @property
    def display_name(self) -> str:
        return SEVERITY_NAMES[self]

    def label(self, axis: Axis) -> str:
        return SEVERITY_LABELS[axis][self]

    @classmethod
    def parse(cls, value: object, remap: Optional[Mapping[str, int]] = None) -> "Severity":
        """Accept an integer level, a level name or a sentence-level label string."""
        if isinstance(value, bool):
            raise ValueError(f"invalid severity {value!r}")
        if isinstance(value, Severity):
            return value
        if isinstance(value, int):
            return cls(value)
        if isinstance(value, str):
            text = value.strip()
            if remap and text in remap:
                return cls(int(remap[text]))
            key = text.lower()
            if key in _SEVERITY_LOOKUP:
                return _SEVERITY_LOOKUP[key]
            if key.isdigit():
                return cls(int(key))
        raise ValueError(f"invalid severity {value!r}")


# Single source of truth for severity serialization.
SEVERITY_NAMES: Dict[Severity, str] = {
    Severity.NONE: "None",
    Severity.WORD: "Word",
    Severity.PARTIAL: "Partial",
    Severity.FULL: "Full",
}

SEVERITY_LABELS: Dict[Axis, Dict[Severity, str]] = {
    Axis.HALLUCINATION: {
        Severity.NONE: "No hallucination",
        Severity.WORD: "Small hallucination",
        Severity.PARTIAL: "Partial hallucination",
        Severity.FULL: "Full hallucination",
    },
    Axis.OMISSION: {
        Severity.NONE: "No omission",
        Severity.WORD: "Small omission",
        Severity.PARTIAL: "Partial omission",
        Severity.FULL: "Full omission",
    },
}

_SEVERITY_LOOKUP: Dict[str, Severity] = {name.lower(): level for level, name in SEVERITY_NAMES.items()}
for _labels in SEVERITY_LABELS.values():
    _SEVERITY_LOOKUP.update({label.lower(): level for level, label in _labels.items()})


@dataclass(frozen=True)
class TokenSpan:
    text: str
    start: int
    end: int


@dataclass(frozen=True, order=True)
class AnnotatedSpan:
    start: int
    end: int
    side: Side = Side.TARGET

    def overlaps(self, start: int, end: int) -> bool:
        return max(self.start, start) < min(self.end, end)


@dataclass(frozen=True)
class Annotation:
    halluc_severity: Severity = Severity.NONE
    omission_severity: Severity = Severity.NONE
    halluc_spans: Tuple[AnnotatedSpan, ...] = ()
    omission_spans: Tuple[AnnotatedSpan, ...] = ()
    incomprehensible: bool = False

    def severity(self, axis: Axis) -> Severity:
        return self.halluc_severity if axis == Axis.HALLUCINATION else self.omission_severity

    @property
    def pathology_severity(self) -> Severity:
        return max(self.halluc_severity, self.omission_severity)


def _frozen_array(values: object, ndim: int) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.size == 0:
        array = array.reshape((0,) * ndim) if array.ndim != ndim else array
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ContributionMatrix:
    """Source contributions per target token: rows are target tokens, columns source tokens."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", _frozen_array(self.entries, 2))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ContributionMatrix):
            return NotImplemented
        return self.entries.shape == other.entries.shape and bool(np.array_equal(self.entries, other.entries))

    __hash__ = None  # type: ignore[assignment]

    @property
    def n_tgt(self) -> int:
        return int(self.entries.shape[0])

    @property
    def n_src(self) -> int:
        return int(self.entries.shape[1]) if self.entries.ndim == 2 else 0

    @property
    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.entries.sum(axis=0)

    def to_lists(self) -> List[List[float]]:
        return self.entries.tolist()


@dataclass(frozen=True, eq=False)
class AttentionDistribution:
    """Head- and target-averaged cross-attention mass over source positions."""

    mass: np.ndarray
    has_eos: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "mass", _frozen_array(self.mass, 1))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AttentionDistribution):
            return NotImplemented
        return self.has_eos == other.has_eos and bool(np.array_equal(self.mass, other.mass))

    __hash__ = None  # type: ignore[assignment]

    def __len__(self) -> int:
        return int(self.mass.shape[0])

    @property
    def n_tokens(self) -> int:
        """Number of source-token positions, EOS excluded."""
        return len(self) - (1 if self.has_eos else 0)

    @property
    def total(self) -> float:
        return float(self.mass.sum())


EmbeddingPair = Tuple[Tuple[float, ...], Tuple[float, ...]]


@dataclass(frozen=True)
class TranslationRecord:
    id: str
    direction: Direction
    data_source: str
    src_text: str
    tgt_text: str
    src_tokens: Tuple[TokenSpan, ...]
    tgt_tokens: Tuple[TokenSpan, ...]
    tgt_logprob: Tuple[float, ...]
    tgt_logprob_uncond: Optional[Tuple[float, ...]] = None
    alti: Optional[ContributionMatrix] = None
    attn: Optional[AttentionDistribution] = None
    src_logprob_rev: Optional[Tuple[float, ...]] = None
    src_logprob_rev_uncond: Optional[Tuple[float, ...]] = None
    embeddings: Optional[Dict[str, EmbeddingPair]] = None
    external_scores: Optional[Dict[str, float]] = None
    annotation: Optional[Annotation] = None
    selection_strategy: Optional[str] = None

    def text(self, side: Side) -> str:
        return self.src_text if side == Side.SOURCE else self.tgt_text

    def tokens(self, side: Side) -> Tuple[TokenSpan, ...]:
        return self.src_tokens if side == Side.SOURCE else self.tgt_tokens

    @property
    def is_evaluable(self) -> bool:
        return self.annotation is not None and not self.annotation.incomprehensible

    def with_annotation(self, annotation: Optional[Annotation]) -> "TranslationRecord":
        return replace(self, annotation=annotation)


@dataclass(frozen=True)
class Corpus:
    records: Tuple[TranslationRecord, ...] = ()
    manifest: Dict[Tuple[str, str], int] = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        seen = set()
        for record in records:
            if record.id in seen:
                raise DuplicateRecordId(record.id)
            seen.add(record.id)
        counts = Counter((str(r.direction), r.data_source) for r in records)
        object.__setattr__(self, "manifest", dict(sorted(counts.items())))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TranslationRecord]:
        return iter(self.records)

    @property
    def ids(self) -> List[str]:
        return [r.id for r in self.records]

    def directions(self) -> List[str]:
        return sorted({str(r.direction) for r in self.records})

    def by_id(self) -> Dict[str, TranslationRecord]:
        return {r.id: r for r in self.records}

    def filter(self, predicate: Callable[[TranslationRecord], bool]) -> "Corpus":
        return Corpus(tuple(r for r in self.records if predicate(r)))
