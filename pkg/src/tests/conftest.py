import re

import numpy as np
import pytest

from src.core.corpus import dump_corpus
from src.core.types import (
    Annotation,
    AttentionDistribution,
    ContributionMatrix,
    Corpus,
    Direction,
    TokenSpan,
    TranslationRecord,
)
from src.synth.generator import generate_corpus


def whitespace_tokens(text):
    return tuple(TokenSpan(m.group(), m.start(), m.end()) for m in re.finditer(r"\S+", text))


def make_record(
    record_id="r1",
    direction="eng_Latn-deu_Latn",
    data_source="flores",
    src_text="the black cat sat",
    tgt_text="die schwarze katze sass",
    logprob=-0.5,
    alti_mass=0.8,
    attn=True,
    annotation=None,
    **extra,
):
    src_tokens = whitespace_tokens(src_text)
    tgt_tokens = whitespace_tokens(tgt_text)
    n_src, n_tgt = len(src_tokens), len(tgt_tokens)
    fields = dict(
        id=record_id,
        direction=Direction.parse(direction),
        data_source=data_source,
        src_text=src_text,
        tgt_text=tgt_text,
        src_tokens=src_tokens,
        tgt_tokens=tgt_tokens,
        tgt_logprob=tuple([logprob] * n_tgt),
        alti=ContributionMatrix(np.full((n_tgt, n_src), alti_mass / n_src)),
        attn=AttentionDistribution(np.append(np.full(n_src, 0.5 / n_src), 0.5), has_eos=True) if attn else None,
        annotation=annotation,
    )
    fields.update(extra)
    return TranslationRecord(**fields)


@pytest.fixture
def record_factory():
    return make_record


@pytest.fixture
def clean_annotation():
    return Annotation()


@pytest.fixture
def write_corpus(tmp_path):
    def write(records, name="corpus.jsonl"):
        path = tmp_path / name
        dump_corpus(Corpus(tuple(records)), path)
        return path

    return write


SMALL_SYNTH = {
    "directions": ["eng_Latn-deu_Latn", "eng_Latn-yor_Latn"],
    "records_per_direction": 60,
    "halluc_mixture": {"Word": 0.1, "Partial": 0.1, "Full": 0.1},
    "omission_mixture": {"Word": 0.1, "Partial": 0.1, "Full": 0.05},
}


@pytest.fixture(scope="session")
def synth_corpus():
    return generate_corpus(SMALL_SYNTH, seed=7)
