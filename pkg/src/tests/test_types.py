import numpy as np
import pytest

from src.core.errors import DuplicateRecordId, EmptySpan, MalformedDirection, NestedMarkup, UnbalancedMarkup
from src.core.markup import parse_span_markup, render_span_markup
from src.core.types import (
    AnnotatedSpan,
    Annotation,
    AttentionDistribution,
    Axis,
    Corpus,
    Direction,
    Severity,
    Side,
)


def test_direction_parse_normalizes_case():
    direction = Direction.parse(" ENG_latn-zho_hans ")
    assert str(direction) == "eng_Latn-zho_Hans"
    assert direction.is_han(Side.TARGET)
    assert not direction.is_han(Side.SOURCE)


@pytest.mark.parametrize("value", ["eng-deu", "eng_Latn_deu_Latn", "en_Latn-deu_Latn", ""])
def test_direction_parse_rejects_malformed(value):
    with pytest.raises(MalformedDirection):
        Direction.parse(value)


def test_high_resource_needs_both_languages():
    high = frozenset({"eng", "deu"})
    assert Direction.parse("eng_Latn-deu_Latn").is_high_resource(high)
    assert not Direction.parse("eng_Latn-yor_Latn").is_high_resource(high)


def test_severity_parse_accepts_levels_names_and_labels():
    assert Severity.parse(2) == Severity.PARTIAL
    assert Severity.parse("full") == Severity.FULL
    assert Severity.parse("Small omission") == Severity.WORD
    assert Severity.parse("No hallucination") == Severity.NONE
    assert Severity.parse("3") == Severity.FULL
    assert Severity.parse("Minor", remap={"Minor": 1}) == Severity.WORD


@pytest.mark.parametrize("value", [True, "huge", 7, None])
def test_severity_parse_rejects_unknown(value):
    with pytest.raises(ValueError):
        Severity.parse(value)


def test_severity_order_and_labels():
    assert Severity.NONE < Severity.WORD < Severity.PARTIAL < Severity.FULL
    assert Severity.PARTIAL.label(Axis.HALLUCINATION) == "Partial hallucination"
    assert Severity.FULL.display_name == "Full"


def test_pathology_severity_is_max_of_axes():
    ann = Annotation(halluc_severity=Severity.WORD, omission_severity=Severity.PARTIAL)
    assert ann.pathology_severity == Severity.PARTIAL
    assert ann.severity(Axis.OMISSION) == Severity.PARTIAL


def test_attention_distribution_counts_tokens_without_eos():
    dist = AttentionDistribution(np.array([0.2, 0.3, 0.5]), has_eos=True)
    assert dist.n_tokens == 2
    assert len(dist) == 3
    assert dist.total == pytest.approx(1.0)
    with pytest.raises(ValueError):
        dist.mass[0] = 1.0


def test_corpus_manifest_and_duplicates(record_factory):
    corpus = Corpus(
        (
            record_factory("b"),
            record_factory("a", data_source="wiki"),
            record_factory("c", direction="eng_Latn-yor_Latn"),
        )
    )
    assert corpus.manifest == {
        ("eng_Latn-deu_Latn", "flores"): 1,
        ("eng_Latn-deu_Latn", "wiki"): 1,
        ("eng_Latn-yor_Latn", "flores"): 1,
    }
    assert corpus.directions() == ["eng_Latn-deu_Latn", "eng_Latn-yor_Latn"]
    with pytest.raises(DuplicateRecordId):
        Corpus((record_factory("a"), record_factory("a")))


def test_markup_parse_returns_plain_offsets():
    plain, spans = parse_span_markup("the <<red>> cat <<sat>>", side=Side.TARGET)
    assert plain == "the red cat sat"
    assert spans == [AnnotatedSpan(4, 7, Side.TARGET), AnnotatedSpan(12, 15, Side.TARGET)]
    assert render_span_markup(plain, spans) == "the <<red>> cat <<sat>>"


def test_markup_custom_delimiters():
    plain, spans = parse_span_markup("a [b] c", "[", "]", Side.SOURCE)
    assert plain == "a b c"
    assert spans == [AnnotatedSpan(2, 3, Side.SOURCE)]


@pytest.mark.parametrize(
    "marked, error",
    [
        ("a <<b c", UnbalancedMarkup),
        ("a b>> c", UnbalancedMarkup),
        ("a <<b <<c>> d>>", NestedMarkup),
        ("a <<>> c", EmptySpan),
        ("a >>b<< c", UnbalancedMarkup),
    ],
)
def test_markup_errors(marked, error):
    with pytest.raises(error):
        parse_span_markup(marked)


def test_markup_round_trip_on_random_texts():
    rng = np.random.default_rng(17)
    alphabet = list("abc xyz.")
    for _ in range(1000):
        length = int(rng.integers(1, 30))
        plain = "".join(rng.choice(alphabet, size=length))
        cuts = sorted(set(rng.integers(0, length + 1, size=int(rng.integers(0, 7))).tolist()))
        bounds = list(zip(cuts[::2], cuts[1::2]))
        spans = [AnnotatedSpan(a, b, Side.TARGET) for a, b in bounds if b > a]
        parsed_plain, parsed_spans = parse_span_markup(render_span_markup(plain, spans))
        assert parsed_plain == plain
        assert parsed_spans == spans
