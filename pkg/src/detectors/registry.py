"""
Detector registry and corpus scoring.

Detector ids: seq_logprob, alti, alti_t, sim:<encoder>, ext:<name>,
wass_to_unif, wass_to_data, wass_combo, wass_mean. The OT ids take a
``_noeos`` suffix for the variant that drops EOS attention first.
"""

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

from ..core.errors import DegenerateMass, MissingInput, UnknownDetector, ZeroVector
from ..core.types import Corpus, TranslationRecord
from ..utils.parallel import ordered_map
from . import attn_ot
from .sentence import (
    ALTI,
    ALTI_T,
    EXT_PREFIX,
    SEQ_LOGPROB,
    SIM_PREFIX,
    alti_mean,
    alti_t_mean,
    embedding_similarity,
    external_score,
    seq_logprob,
)

logger = structlog.get_logger(__name__)

OT_BASES = (attn_ot.WASS_TO_UNIF, attn_ot.WASS_TO_DATA, attn_ot.WASS_COMBO, attn_ot.WASS_MEAN)

ScoreFn = Callable[[TranslationRecord, Optional[attn_ot.OtContext]], float]


@dataclass(frozen=True)
class DetectorSpec:
    name: str
    requires: Tuple[str, ...]
    compute: ScoreFn
    drop_eos: Optional[bool] = None
    needs_reference: bool = False
    needs_calibration: bool = False


def _context(ctx: Optional[attn_ot.OtContext], name: str, record: TranslationRecord) -> attn_ot.OtContext:
    if ctx is None:
        raise MissingInput(name, "reference set", record.id)
    return ctx


def _ot_spec(base: str, drop_eos: bool) -> DetectorSpec:
    name = base + (attn_ot.NOEOS_SUFFIX if drop_eos else "")

    if base == attn_ot.WASS_TO_UNIF:

        def compute(record, ctx):
            return attn_ot.wass_to_unif(attn_ot.attention_distribution(record, drop_eos))

    elif base == attn_ot.WASS_TO_DATA:

        def compute(record, ctx):
            return _context(ctx, name, record).raw_scores(record, drop_eos, name)[1]

    else:
        combine = attn_ot.combine_wass_scores if base == attn_ot.WASS_COMBO else attn_ot.mean_wass_scores

        def compute(record, ctx):
            ctx = _context(ctx, name, record)
            cal = ctx.calibration(record, drop_eos, name)
            wtu, wtd = ctx.raw_scores(record, drop_eos, name)
            return combine(wtu, wtd, cal)

    return DetectorSpec(
        name=name,
        requires=("attn",),
        compute=compute,
        drop_eos=drop_eos,
        needs_reference=base != attn_ot.WASS_TO_UNIF,
        needs_calibration=base in (attn_ot.WASS_COMBO, attn_ot.WASS_MEAN),
    )


_FIXED: Dict[str, DetectorSpec] = {
    SEQ_LOGPROB: DetectorSpec(SEQ_LOGPROB, ("tgt_logprob",), lambda r, ctx: seq_logprob(r).value),
    ALTI: DetectorSpec(ALTI, ("alti",), lambda r, ctx: alti_mean(r).value),
    ALTI_T: DetectorSpec(ALTI_T, ("alti",), lambda r, ctx: alti_t_mean(r).value),
}


def resolve_detector(name: str) -> DetectorSpec:
    if name in _FIXED:
        return _FIXED[name]
    if name.startswith(SIM_PREFIX) and len(name) > len(SIM_PREFIX):
        encoder = name[len(SIM_PREFIX) :]
        return DetectorSpec(name, ("embeddings",), lambda r, ctx: embedding_similarity(r, encoder).value)
    if name.startswith(EXT_PREFIX) and len(name) > len(EXT_PREFIX):
        scorer = name[len(EXT_PREFIX) :]
        return DetectorSpec(name, ("external_scores",), lambda r, ctx: external_score(r, scorer).value)
    drop_eos = name.endswith(attn_ot.NOEOS_SUFFIX)
    base = name[: -len(attn_ot.NOEOS_SUFFIX)] if drop_eos else name
    if base in OT_BASES:
        return _ot_spec(base, drop_eos)
    raise UnknownDetector(name)


def parse_detector_list(text: str) -> List[str]:
    names = [part.strip() for part in text.split(",") if part.strip()]
    for name in names:
        resolve_detector(name)
    return names


def score_record(
    record: TranslationRecord,
    specs: Sequence[DetectorSpec],
    ctx: Optional[attn_ot.OtContext] = None,
) -> Tuple[List[float], List[Tuple[str, str]]]:
    """Scores for one record; unavailable cells are NaN with a (detector, reason) note."""
    values, skipped = [], []
    for spec in specs:
        try:
            values.append(float(spec.compute(record, ctx)))
        except MissingInput as exc:
            values.append(np.nan)
            skipped.append((spec.name, f"missing {exc.field}"))
        except (ZeroVector, DegenerateMass) as exc:
            values.append(np.nan)
            skipped.append((spec.name, type(exc).__name__))
    return values, skipped


def score_corpus(
    corpus: Corpus,
    detectors: Sequence[str],
    ctx: Optional[attn_ot.OtContext] = None,
    threads: int = 1,
) -> pd.DataFrame:
    """Score table sorted by id: id, direction, data_source, then one column per detector."""
    specs = [resolve_detector(name) for name in detectors]
    records = sorted(corpus, key=lambda r: r.id)
    results = ordered_map(lambda r: score_record(r, specs, ctx), records, threads)

    skipped = Counter(note for _, notes in results for note in notes)
    for (detector, reason), count in sorted(skipped.items()):
        logger.warning("detector_skipped_records", detector=detector, reason=reason, count=count)

    frame = pd.DataFrame(
        {
            "id": [r.id for r in records],
            "direction": [str(r.direction) for r in records],
            "data_source": [r.data_source for r in records],
        }
    )
    values = np.array([row for row, _ in results], dtype=np.float64).reshape(len(records), len(specs))
    for j, spec in enumerate(specs):
        frame[spec.name] = values[:, j]
    logger.info("corpus_scored", records=len(records), detectors=[s.name for s in specs], threads=threads)
    return frame
