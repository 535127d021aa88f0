"""
Matched stratified downsampling of two annotated corpora.

Both corpora keep the same number of records in every
(pathology label, data_source, direction) stratum.
"""

from collections import defaultdict
from typing import Dict, List, Tuple

import numpy as np
import structlog

from ..core.types import Corpus, TranslationRecord

logger = structlog.get_logger(__name__)

Stratum = Tuple[int, str, str]


def stratum_of(record: TranslationRecord) -> Stratum:
    return (int(record.annotation.pathology_severity), record.data_source, str(record.direction))


def _strata(corpus: Corpus) -> Dict[Stratum, List[str]]:
    groups: Dict[Stratum, List[str]] = defaultdict(list)
    for record in corpus:
        if record.is_evaluable:
            groups[stratum_of(record)].append(record.id)
    return {key: sorted(ids) for key, ids in groups.items()}


def matched_downsample(a: Corpus, b: Corpus, seed: int) -> Tuple[Corpus, Corpus]:
    rng = np.random.default_rng(seed)
    strata_a, strata_b = _strata(a), _strata(b)
    keep_a, keep_b = set(), set()
    for key in sorted(set(strata_a) | set(strata_b)):
        ids_a, ids_b = strata_a.get(key, []), strata_b.get(key, [])
        m = min(len(ids_a), len(ids_b))
        if m == 0:
            continue
        keep_a.update(ids_a[i] for i in rng.choice(len(ids_a), size=m, replace=False))
        keep_b.update(ids_b[i] for i in rng.choice(len(ids_b), size=m, replace=False))
    out_a = a.filter(lambda r: r.id in keep_a)
    out_b = b.filter(lambda r: r.id in keep_b)
    logger.info("matched_downsample", seed=seed, kept_a=len(out_a), kept_b=len(out_b), of_a=len(a), of_b=len(b))
    return out_a, out_b
