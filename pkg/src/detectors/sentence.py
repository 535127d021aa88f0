"""
Sentence-level detectors over internal traces and precomputed external signals.

Every detector returns a pathology score: higher means more pathological.
Raw quality signals are negated here and nowhere else.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..core.errors import MissingInput, ZeroVector
from ..core.types import TranslationRecord

SEQ_LOGPROB = "seq_logprob"
ALTI = "alti"
ALTI_T = "alti_t"
SIM_PREFIX = "sim:"
EXT_PREFIX = "ext:"


@dataclass(frozen=True)
class DetectorScore:
    detector: str
    value: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError(f"{self.detector}: non-finite score {self.value!r}")


def seq_logprob(record: TranslationRecord) -> DetectorScore:
    """Negated length-normalized sequence log-probability."""
    if not record.tgt_logprob:
        raise MissingInput(SEQ_LOGPROB, "tgt_logprob", record.id)
    return DetectorScore(SEQ_LOGPROB, -float(np.mean(record.tgt_logprob)))


def alti_mean(record: TranslationRecord) -> DetectorScore:
    """Negated mean source contribution per target token."""
    if record.alti is None or record.alti.n_tgt == 0:
        raise MissingInput(ALTI, "alti", record.id)
    return DetectorScore(ALTI, -float(record.alti.row_sums.mean()))


def alti_t_mean(record: TranslationRecord) -> DetectorScore:
    """Negated mean usage per source token; column sums may exceed 1."""
    if record.alti is None or record.alti.n_src == 0:
        raise MissingInput(ALTI_T, "alti", record.id)
    return DetectorScore(ALTI_T, -float(record.alti.col_sums.mean()))


def embedding_similarity(record: TranslationRecord, encoder: str) -> DetectorScore:
    name = SIM_PREFIX + encoder
    if not record.embeddings or encoder not in record.embeddings:
        raise MissingInput(name, f"embeddings[{encoder}]", record.id)
    src, tgt = (np.asarray(v, dtype=np.float64) for v in record.embeddings[encoder])
    src_norm, tgt_norm = np.linalg.norm(src), np.linalg.norm(tgt)
    if src_norm == 0 or tgt_norm == 0:
        raise ZeroVector(encoder)
    cosine = float(np.dot(src, tgt) / (src_norm * tgt_norm))
    return DetectorScore(name, -min(1.0, max(-1.0, cosine)))


def external_score(record: TranslationRecord, name: str) -> DetectorScore:
    """Pass-through of a stored quality score (stored higher = better)."""
    detector = EXT_PREFIX + name
    if not record.external_scores or name not in record.external_scores:
        raise MissingInput(detector, f"external_scores[{name}]", record.id)
    return DetectorScore(detector, -float(record.external_scores[name]))
