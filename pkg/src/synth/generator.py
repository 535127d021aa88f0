"""
Synthetic trace corpora with planted pathologies.

Texts are pseudo-words built from Latin syllables. The target copies the
source's non-omitted words in order (each translated word keeps its source
word's token count) and may carry one inserted run of hallucinated words.
Traces are drawn so that hallucinated target tokens and omitted source tokens
look pathological, except for per-token "miss" events that make a token
look clean to one feature family.
"""

import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pydantic
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..core.errors import InvalidConfig, InvalidSpec, MalformedDirection
from ..core.types import (
    AnnotatedSpan,
    Annotation,
    AttentionDistribution,
    ContributionMatrix,
    Corpus,
    Direction,
    Severity,
    Side,
    TokenSpan,
    TranslationRecord,
)
from ..utils.config import load_model

logger = structlog.get_logger(__name__)

CONSONANTS = "bdfgklmnprstvz"
VOWELS = "aeiou"
PUNCT = "."


class SignalParams(BaseModel):
    """Trace distributions; masses are Beta draws with the given means and a shared sd."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    clean_mass_mean: float = Field(0.85, gt=0, lt=1)
    pathological_mass_mean: float = Field(0.1, gt=0, lt=1)
    mass_sd: float = Field(0.05, gt=0)
    aligned_share: float = Field(0.6, ge=0, le=1)
    sink_share: float = Field(0.6, ge=0, le=1)
    omitted_column_factor: float = Field(0.05, gt=0, le=1)
    miss_rate: float = Field(0.15, ge=0, lt=1)
    clean_logprob_mean: float = 0.3
    clean_logprob_sd: float = 0.1
    pathological_logprob_mean: float = 2.5
    pathological_logprob_sd: float = 0.3
    clean_contrast_mean: float = 3.0
    clean_contrast_sd: float = 0.3
    pathological_contrast_mean: float = 0.05
    pathological_contrast_sd: float = 0.05
    eos_mass: float = Field(0.75, ge=0, lt=1)
    embedding_dim: int = Field(16, ge=2)
    similarity_noise: float = Field(0.05, ge=0)
    external_noise: float = Field(0.05, ge=0)

    @model_validator(mode="after")
    def _beta_feasible(self) -> "SignalParams":
        for mean in (self.clean_mass_mean, self.pathological_mass_mean):
            if self.mass_sd**2 >= mean * (1 - mean):
                raise ValueError(f"mass_sd {self.mass_sd} too large for mean {mean}")
        return self

    def beta(self, mean: float) -> Tuple[float, float]:
        concentration = mean * (1 - mean) / self.mass_sd**2 - 1
        return mean * concentration, (1 - mean) * concentration


def _severity_key(value: str) -> Severity:
    level = Severity.parse(value)
    if level == Severity.NONE:
        raise ValueError("mixtures list pathological levels only")
    return level


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    directions: List[str] = Field(
        default_factory=lambda: ["eng_Latn-deu_Latn", "eng_Latn-yor_Latn", "spa_Latn-eng_Latn"]
    )
    records_per_direction: int = Field(500, ge=1)
    data_sources: List[str] = Field(default_factory=lambda: ["flores", "wikipedia"])
    halluc_mixture: Dict[str, float] = Field(default_factory=lambda: {"Word": 0.01, "Partial": 0.01, "Full": 0.01})
    omission_mixture: Dict[str, float] = Field(default_factory=lambda: {"Word": 0.06, "Partial": 0.06, "Full": 0.05})
    min_words: int = Field(8, ge=4)
    max_words: int = Field(18, ge=4)
    full_halluc_words: Tuple[int, int] = (3, 6)
    encoder: str = "laser3"
    external_scorer: str = "comet_qe"
    signal: SignalParams = Field(default_factory=SignalParams)

    @field_validator("directions")
    @classmethod
    def _directions(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("at least one direction is required")
        try:
            return [str(Direction.parse(d)) for d in value]
        except MalformedDirection as exc:
            raise ValueError(str(exc)) from exc

    @field_validator("halluc_mixture", "omission_mixture")
    @classmethod
    def _mixture(cls, value: Dict[str, float]) -> Dict[str, float]:
        for key, rate in value.items():
            _severity_key(key)
            if not 0 <= rate <= 1:
                raise ValueError(f"rate for {key} must lie in [0, 1]")
        if sum(value.values()) > 1 + 1e-12:
            raise ValueError("mixture rates sum above 1")
        return value

    @model_validator(mode="after")
    def _lengths(self) -> "SynthConfig":
        if self.min_words > self.max_words:
            raise ValueError("min_words exceeds max_words")
        low, high = self.full_halluc_words
        if not 1 <= low <= high:
            raise ValueError("full_halluc_words must be an increasing positive range")
        if not self.data_sources:
            raise ValueError("at least one data source is required")
        return self


def load_synth_config(path: Union[str, Path, None]) -> SynthConfig:
    return SynthConfig() if path is None else load_model(path, SynthConfig)


class RecordSpec(BaseModel):
    """
    Shape of one synthetic record.

    ``omission_runs`` are half-open ranges of omitted source content words.
    ``halluc_run`` is (insert position among the kept target words, number of
    hallucinated words); under a Full hallucination the target holds only the
    hallucinated words.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    id: str
    direction: str
    data_source: str = "synthetic"
    src_words: int = Field(..., ge=1)
    halluc_severity: Severity = Severity.NONE
    omission_severity: Severity = Severity.NONE
    halluc_run: Optional[Tuple[int, int]] = None
    omission_runs: List[Tuple[int, int]] = Field(default_factory=list)
    encoder: str = "laser3"
    external_scorer: str = "comet_qe"
    signal: SignalParams = Field(default_factory=SignalParams)

    def kept_words(self) -> List[int]:
        omitted = {i for start, end in self.omission_runs for i in range(start, end)}
        return [i for i in range(self.src_words) if i not in omitted]


def check_spec(spec: RecordSpec) -> Direction:
    try:
        direction = Direction.parse(spec.direction)
    except MalformedDirection as exc:
        raise InvalidSpec(str(exc)) from exc
    previous_end = 0
    for start, end in spec.omission_runs:
        if not 0 <= start < end <= spec.src_words:
            raise InvalidSpec(f"{spec.id}: omission run [{start},{end}) out of range for {spec.src_words} words")
        if start < previous_end:
            raise InvalidSpec(f"{spec.id}: omission runs overlap or are unsorted")
        previous_end = end
    if (spec.omission_severity == Severity.NONE) != (not spec.omission_runs):
        raise InvalidSpec(f"{spec.id}: omission severity and runs disagree")
    if (spec.halluc_severity == Severity.NONE) != (spec.halluc_run is None):
        raise InvalidSpec(f"{spec.id}: hallucination severity and run disagree")
    if spec.halluc_run is not None:
        position, count = spec.halluc_run
        limit = 0 if spec.halluc_severity == Severity.FULL else len(spec.kept_words())
        if count < 1 or not 0 <= position <= limit:
            raise InvalidSpec(f"{spec.id}: hallucination run {spec.halluc_run} out of range")
    return direction


# Text construction


@dataclass
class _Word:
    text: str
    cuts: List[int]  # token boundaries inside the word
    source_index: Optional[int] = None  # source word this word translates
    pathological: bool = False

    @property
    def n_tokens(self) -> int:
        return len(self.cuts) + 1


def _pseudo_word(rng: np.random.Generator, n_syllables: int) -> Tuple[str, List[int]]:
    syllables = [
        CONSONANTS[rng.integers(len(CONSONANTS))] + VOWELS[rng.integers(len(VOWELS))] for _ in range(n_syllables)
    ]
    return "".join(syllables), [2 * i for i in range(1, n_syllables)]


def _source_word(rng: np.random.Generator) -> _Word:
    n_syllables = int(rng.integers(1, 4))
    text, boundaries = _pseudo_word(rng, n_syllables)
    cuts = [boundaries[int(rng.integers(len(boundaries)))]] if boundaries and rng.random() < 0.4 else []
    return _Word(text, cuts)


def _word_with_tokens(rng: np.random.Generator, n_tokens: int) -> _Word:
    if n_tokens == 1:
        text, _ = _pseudo_word(rng, int(rng.integers(1, 4)))
        return _Word(text, [])
    text, boundaries = _pseudo_word(rng, int(rng.integers(2, 4)))
    return _Word(text, [boundaries[0]])


def _layout(words: Sequence[_Word]) -> Tuple[str, List[TokenSpan], List[Tuple[int, int]], List[List[int]]]:
    """Join words into text; returns text, tokens, word char spans and token indices per word."""
    pieces, tokens, spans, word_tokens = [], [], [], []
    cursor = 0
    for i, word in enumerate(words):
        if i > 0 and word.text != PUNCT:
            pieces.append(" ")
            cursor += 1
        start = cursor
        bounds = [0] + word.cuts + [len(word.text)]
        indices = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            indices.append(len(tokens))
            tokens.append(TokenSpan(word.text[a:b], start + a, start + b))
        pieces.append(word.text)
        cursor += len(word.text)
        spans.append((start, cursor))
        word_tokens.append(indices)
    return "".join(pieces), tokens, spans, word_tokens


def _runs(flags: Sequence[bool]) -> List[Tuple[int, int]]:
    runs, start = [], None
    for i, flag in enumerate(list(flags) + [False]):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i))
            start = None
    return runs


def _char_spans(runs: Sequence[Tuple[int, int]], spans: Sequence[Tuple[int, int]], side: Side) -> Tuple[AnnotatedSpan, ...]:
    return tuple(AnnotatedSpan(spans[a][0], spans[b - 1][1], side) for a, b in runs)


@dataclass(frozen=True)
class PlantedRecord:
    record: TranslationRecord
    target_word_labels: List[int]
    source_word_labels: List[int]


def _record_rng(seed: int, record_id: str, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(record_id.encode("utf-8")), stream])


def plant(spec: RecordSpec, seed: int) -> PlantedRecord:
    """Generate a record together with its planted word labels."""
    direction = check_spec(spec)
    params = spec.signal
    rng = _record_rng(seed, spec.id)

    # source: content words then a final period
    src_words = [_source_word(rng) for _ in range(spec.src_words)] + [_Word(PUNCT, [])]
    omitted_words = {i for start, end in spec.omission_runs for i in range(start, end)}
    for i in omitted_words:
        src_words[i].pathological = True
    period = len(src_words) - 1

    # target: translations of kept words with an optional hallucinated run, then a period
    translated = []
    if spec.halluc_severity != Severity.FULL:
        for i in spec.kept_words():
            word = _word_with_tokens(rng, src_words[i].n_tokens)
            word.source_index = i
            translated.append(word)
    if spec.halluc_run is not None:
        position, count = spec.halluc_run
        inserted = [_word_with_tokens(rng, int(rng.integers(1, 3))) for _ in range(count)]
        for word in inserted:
            word.pathological = True
        translated[position:position] = inserted
    tgt_period = _Word(PUNCT, [], source_index=period, pathological=spec.halluc_severity == Severity.FULL)
    tgt_words = translated + [tgt_period]

    src_text, src_tokens, src_spans, src_word_tokens = _layout(src_words)
    tgt_text, tgt_tokens, tgt_spans, tgt_word_tokens = _layout(tgt_words)
    n_src, n_tgt = len(src_tokens), len(tgt_tokens)

    # per-token pathology flags and miss events (Full hallucinations never miss)
    misses_allowed = spec.halluc_severity != Severity.FULL
    src_bad = np.zeros(n_src, dtype=bool)
    for i, word in enumerate(src_words):
        src_bad[src_word_tokens[i]] = word.pathological
    tgt_bad = np.zeros(n_tgt, dtype=bool)
    aligned = np.full(n_tgt, -1)
    for i, word in enumerate(tgt_words):
        tgt_bad[tgt_word_tokens[i]] = word.pathological
        if word.source_index is not None and not word.pathological:
            for sub, k in enumerate(tgt_word_tokens[i]):
                aligned[k] = src_word_tokens[word.source_index][sub]

    def misses(n: int) -> np.ndarray:
        return rng.random(n) < params.miss_rate if misses_allowed else np.zeros(n, dtype=bool)

    tgt_alti_bad = tgt_bad & ~misses(n_tgt)
    tgt_lp_bad = tgt_bad & ~misses(n_tgt)
    src_alti_bad = src_bad & ~misses(n_src)
    src_lp_bad = src_bad & ~misses(n_src)

    kept_src_tokens = np.flatnonzero(~src_bad)
    sink = int(kept_src_tokens[0]) if len(kept_src_tokens) else n_src - 1

    # contribution matrix
    col_weight = np.where(src_alti_bad, params.omitted_column_factor, 1.0)
    col_weight = col_weight / col_weight.sum()
    clean_a, clean_b = params.beta(params.clean_mass_mean)
    bad_a, bad_b = params.beta(params.pathological_mass_mean)
    alti = np.zeros((n_tgt, n_src))
    for k in range(n_tgt):
        if tgt_alti_bad[k]:
            mass = rng.beta(bad_a, bad_b)
            focus, share = sink, params.sink_share
        else:
            mass = rng.beta(clean_a, clean_b)
            focus = aligned[k] if aligned[k] >= 0 else int(rng.choice(kept_src_tokens)) if len(kept_src_tokens) else sink
            share = params.aligned_share
        row = (1.0 - share) * col_weight
        row[focus] += share
        alti[k] = mass * row

    # log-probabilities, conditional and unconditioned
    def logprobs(bad: np.ndarray) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
        n = len(bad)
        clean_lp = -np.abs(rng.normal(params.clean_logprob_mean, params.clean_logprob_sd, n))
        bad_lp = -np.abs(rng.normal(params.pathological_logprob_mean, params.pathological_logprob_sd, n))
        clean_delta = np.abs(rng.normal(params.clean_contrast_mean, params.clean_contrast_sd, n))
        bad_delta = np.abs(rng.normal(params.pathological_contrast_mean, params.pathological_contrast_sd, n))
        lp = np.where(bad, bad_lp, clean_lp)
        uncond = lp - np.where(bad, bad_delta, clean_delta)
        return tuple(lp.tolist()), tuple(uncond.tolist())

    tgt_lp, tgt_uncond = logprobs(tgt_lp_bad)
    src_lp, src_uncond = logprobs(src_lp_bad)

    # attention: normalized source usage plus EOS mass
    usage = alti.sum(axis=0)
    attn_mass = np.append(usage / usage.sum() * (1.0 - params.eos_mass), params.eos_mass)

    # sentence-level signals track content coverage
    n_content = spec.src_words
    kept_fraction = len(spec.kept_words()) / n_content if spec.halluc_severity != Severity.FULL else 0.0
    halluc_fraction = sum(w.pathological for w in translated) / max(len(translated), 1)
    coverage = kept_fraction * (1.0 - halluc_fraction)
    embeddings = {spec.encoder: _embedding_pair(rng, coverage, params)}
    external = {spec.external_scorer: float(coverage + rng.normal(0.0, params.external_noise))}

    tgt_labels = [int(w.pathological) for w in tgt_words]
    src_labels = [int(w.pathological) for w in src_words]
    annotation = Annotation(
        halluc_severity=spec.halluc_severity,
        omission_severity=spec.omission_severity,
        halluc_spans=_char_spans(_runs(tgt_labels), tgt_spans, Side.TARGET),
        omission_spans=_char_spans(_runs(src_labels), src_spans, Side.SOURCE),
    )
    record = TranslationRecord(
        id=spec.id,
        direction=direction,
        data_source=spec.data_source,
        src_text=src_text,
        tgt_text=tgt_text,
        src_tokens=tuple(src_tokens),
        tgt_tokens=tuple(tgt_tokens),
        tgt_logprob=tgt_lp,
        tgt_logprob_uncond=tgt_uncond,
        alti=ContributionMatrix(alti),
        attn=AttentionDistribution(attn_mass, has_eos=True),
        src_logprob_rev=src_lp,
        src_logprob_rev_uncond=src_uncond,
        embeddings=embeddings,
        external_scores=external,
        annotation=annotation,
    )
    return PlantedRecord(record, tgt_labels, src_labels)


def _embedding_pair(rng: np.random.Generator, coverage: float, params: SignalParams):
    """Unit source vector and a target vector whose cosine with it is close to ``coverage``."""
    dim = params.embedding_dim
    src = rng.normal(size=dim)
    src /= np.linalg.norm(src)
    other = rng.normal(size=dim)
    other -= np.dot(other, src) * src
    other /= np.linalg.norm(other)
    cosine = float(np.clip(coverage + rng.normal(0.0, params.similarity_noise), -0.99, 0.999))
    tgt = cosine * src + np.sqrt(1.0 - cosine**2) * other
    return tuple(src.tolist()), tuple(tgt.tolist())


def generate_record(spec: RecordSpec, seed: int) -> TranslationRecord:
    return plant(spec, seed).record


# Corpus planning


def _level_counts(mixture: Dict[str, float], n: int) -> Dict[Severity, int]:
    counts = {_severity_key(key): int(round(rate * n)) for key, rate in mixture.items()}
    if sum(counts.values()) > n:
        raise InvalidConfig(f"mixture {mixture} needs more than {n} records")
    return counts


def _levels(counts: Dict[Severity, int], n: int, rng: np.random.Generator) -> List[Severity]:
    levels = [Severity.NONE] * n
    cursor = 0
    order = rng.permutation(n)
    for level in sorted(counts):
        for i in order[cursor : cursor + counts[level]]:
            levels[int(i)] = level
        cursor += counts[level]
    return levels


def _run_length(level: Severity, n: int, rng: np.random.Generator) -> int:
    if level == Severity.WORD:
        return int(rng.integers(1, min(2, n) + 1))
    if level == Severity.PARTIAL:
        high = max(3, n // 2)
        return int(rng.integers(min(3, n), min(high, n) + 1))
    return n


def plan_spec(
    record_id: str,
    direction: str,
    data_source: str,
    halluc: Severity,
    omission: Severity,
    config: SynthConfig,
    seed: int,
) -> RecordSpec:
    """Random lengths and span positions for the given severities."""
    rng = _record_rng(seed, record_id, stream=1)
    n = int(rng.integers(config.min_words, config.max_words + 1))

    omission_runs: List[Tuple[int, int]] = []
    if omission == Severity.FULL:
        keep = int(rng.integers(n))
        omission_runs = [r for r in ((0, keep), (keep + 1, n)) if r[0] < r[1]]
    elif omission != Severity.NONE:
        length = _run_length(omission, n - 1, rng)
        start = int(rng.integers(0, n - length + 1))
        omission_runs = [(start, start + length)]
    n_kept = n - sum(end - start for start, end in omission_runs)

    halluc_run = None
    if halluc == Severity.FULL:
        low, high = config.full_halluc_words
        halluc_run = (0, int(rng.integers(low, high + 1)))
    elif halluc != Severity.NONE:
        length = _run_length(halluc, max(n_kept, 2), rng)
        halluc_run = (int(rng.integers(0, n_kept + 1)), length)

    return RecordSpec(
        id=record_id,
        direction=direction,
        data_source=data_source,
        src_words=n,
        halluc_severity=halluc,
        omission_severity=omission,
        halluc_run=halluc_run,
        omission_runs=omission_runs,
        encoder=config.encoder,
        external_scorer=config.external_scorer,
        signal=config.signal,
    )


def corpus_specs(config: SynthConfig, seed: int) -> List[RecordSpec]:
    n = config.records_per_direction
    halluc_counts = _level_counts(config.halluc_mixture, n)
    omission_counts = _level_counts(config.omission_mixture, n)
    specs = []
    for direction in config.directions:
        rng = np.random.default_rng([seed, zlib.crc32(direction.encode("utf-8"))])
        halluc_levels = _levels(halluc_counts, n, rng)
        omission_levels = _levels(omission_counts, n, rng)
        for i in range(n):
            specs.append(
                plan_spec(
                    f"{direction}-{i:05d}",
                    direction,
                    config.data_sources[i % len(config.data_sources)],
                    halluc_levels[i],
                    omission_levels[i],
                    config,
                    seed,
                )
            )
    return specs


def generate_corpus(config: Union[SynthConfig, dict, None], seed: int) -> Corpus:
    """Corpus whose per-direction severity counts match the configured mixture exactly."""
    if not isinstance(config, SynthConfig):
        try:
            config = SynthConfig.model_validate(config or {})
        except pydantic.ValidationError as exc:
            first = exc.errors()[0]
            where = ".".join(str(part) for part in first["loc"]) or "(root)"
            raise InvalidConfig(f"synth config: {where}: {first['msg']}") from exc
    specs = corpus_specs(config, seed)
    corpus = Corpus(tuple(generate_record(spec, seed) for spec in specs))
    logger.info("synthetic_corpus_generated", records=len(corpus), directions=len(config.directions), seed=seed)
    return corpus
