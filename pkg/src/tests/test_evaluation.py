import itertools

import numpy as np
import pandas as pd
import pytest
from sklearn.metrics import roc_auc_score

from src.core.errors import DegenerateLabels, EmptyTask, MissingScores, NoEvaluableDirections, NonBinaryLabels
from src.core.types import AnnotatedSpan, Annotation, Corpus, Severity, Side
from src.evaluation.downsample import matched_downsample, stratum_of
from src.evaluation.metrics import pair_counts, pairwise_ranking_score, roc_auc
from src.evaluation.report import merge_matrices, ranking_agreement, summary_rows
from src.evaluation.tasks import MEAN_ROW, TaskId, build_task, evaluate, evaluate_instances, results_matrix


def brute_force(scores, labels):
    incorrect = ties = total = 0
    for (s1, l1), (s2, l2) in itertools.combinations(zip(scores, labels), 2):
        if l1 == l2:
            continue
        total += 1
        if s1 == s2:
            ties += 1
        elif (s1 - s2) * (l1 - l2) < 0:
            incorrect += 1
    return incorrect, ties, total


def test_pair_counts_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        scores = rng.integers(0, 6, n).astype(float)
        labels = rng.integers(0, 4, n)
        assert pair_counts(scores, labels) == brute_force(scores, labels)


def test_ranking_score_extremes():
    labels = [0, 0, 1, 2, 3]
    assert pairwise_ranking_score([0.1, 0.2, 0.5, 0.7, 0.9], labels) == 1.0
    assert pairwise_ranking_score([0.9, 0.8, 0.5, 0.2, 0.1], labels) == 0.0
    assert pairwise_ranking_score([1.0] * 5, labels) == 0.5
    with pytest.raises(DegenerateLabels):
        pairwise_ranking_score([0.1, 0.2], [1, 1])


def test_binary_ranking_score_is_auc():
    rng = np.random.default_rng(1)
    scores = rng.integers(0, 10, 60).astype(float)
    labels = rng.integers(0, 2, 60)
    expected = roc_auc_score(labels, scores)
    assert pairwise_ranking_score(scores, labels) == pytest.approx(expected)
    assert roc_auc(scores, labels) == pytest.approx(expected)
    with pytest.raises(NonBinaryLabels):
        roc_auc(scores, labels + 1)


def test_binary_ranking_score_matches_auc_on_random_instances():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(4, 51))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, 8, n).astype(float)
        assert abs(pairwise_ranking_score(scores, labels) - roc_auc_score(labels, scores)) <= 1e-12


def test_ranking_score_ignores_monotone_transforms():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(3, 51))
        labels = rng.integers(0, 4, n)
        labels[:2] = [0, 3]
        scores = rng.normal(size=n).round(1)
        slope, shift = rng.uniform(0.1, 5.0), rng.normal()
        transforms = (np.exp(scores), slope * scores + shift, np.arctan(scores), scores**3)
        base = pairwise_ranking_score(scores, labels)
        for transformed in transforms:
            assert pairwise_ranking_score(transformed, labels) == base


def ann(halluc=Severity.NONE, omission=Severity.NONE, tgt_span=None, src_span=None):
    return Annotation(
        halluc_severity=halluc,
        omission_severity=omission,
        halluc_spans=(AnnotatedSpan(*tgt_span, Side.TARGET),) if tgt_span else (),
        omission_spans=(AnnotatedSpan(*src_span, Side.SOURCE),) if src_span else (),
    )


@pytest.fixture
def annotated(record_factory):
    deu, yor = "eng_Latn-deu_Latn", "eng_Latn-yor_Latn"
    return Corpus(
        (
            record_factory("d1", deu, annotation=ann()),
            record_factory("d2", deu, annotation=ann(Severity.WORD, tgt_span=(4, 12))),
            record_factory("d3", deu, annotation=ann(Severity.FULL, Severity.PARTIAL, (0, 23), (0, 9))),
            record_factory("d4", deu, annotation=ann(omission=Severity.WORD, src_span=(4, 9))),
            record_factory("y1", yor, annotation=ann()),
            record_factory("y2", yor, annotation=ann()),
            record_factory("y3", yor),
        )
    )


def test_build_sentence_tasks(annotated):
    halluc = build_task(annotated, TaskId.SENT_HALLUC)
    assert halluc["id"].tolist() == ["d1", "d2", "d3", "d4", "y1", "y2"]
    assert halluc["label"].tolist() == [0, 1, 3, 0, 0, 0]
    omission = build_task(annotated, TaskId.SENT_OMISSION)
    assert omission["id"].tolist() == ["d1", "d4", "y1", "y2"]
    pathology = build_task(annotated, TaskId.SENT_PATHOLOGY)
    assert pathology.set_index("id")["label"]["d3"] == 3


def test_build_word_task(annotated):
    words = build_task(annotated, TaskId.WORD_HALLUC)
    d2 = words[words["id"] == "d2"]
    assert d2["label"].tolist() == [0, 1, 0, 0]
    assert d2["word_text"].tolist() == ["die", "schwarze", "katze", "sass"]
    source = build_task(annotated, TaskId.WORD_OMISSION)
    assert source[source["id"] == "d4"]["label"].tolist() == [0, 1, 0, 0]


def test_empty_task(record_factory):
    with pytest.raises(EmptyTask):
        build_task(Corpus((record_factory("a"),)), TaskId.SENT_HALLUC)


def test_evaluate_excludes_single_class_directions(annotated):
    scores = pd.Series({"d1": 0.1, "d2": 0.5, "d3": 0.9, "d4": 0.2, "y1": 0.3, "y2": 0.4})
    result = evaluate(annotated, "toy_detector", TaskId.SENT_HALLUC, scores)
    assert result.scores == {"eng_Latn-deu_Latn": 1.0}
    assert result.excluded == ["eng_Latn-yor_Latn"]
    assert result.counts == {"eng_Latn-deu_Latn": 4, "eng_Latn-yor_Latn": 2}
    assert result.mean == 1.0
    assert result.mean_high_resource == 1.0
    assert result.mean_low_resource is None

    matrix = results_matrix([result])
    assert matrix["direction"].tolist() == ["eng_Latn-deu_Latn", "eng_Latn-yor_Latn", MEAN_ROW]
    assert np.isnan(matrix["toy_detector"].iloc[1])


def test_evaluate_handles_missing_scores(annotated):
    instances = build_task(annotated, TaskId.SENT_HALLUC)
    partial = pd.Series({"d1": 0.1, "d2": 0.5, "d3": np.nan})
    result = evaluate_instances(instances, partial, TaskId.SENT_HALLUC, "partial")
    assert result.n_missing == 4
    assert result.scores == {"eng_Latn-deu_Latn": 1.0}
    with pytest.raises(MissingScores):
        evaluate_instances(instances, pd.Series([], index=pd.Index([], dtype=object), dtype=float), TaskId.SENT_HALLUC, "none")
    only_yor = instances[instances["direction"] == "eng_Latn-yor_Latn"]
    with pytest.raises(NoEvaluableDirections):
        evaluate_instances(only_yor, pd.Series({"y1": 0.1, "y2": 0.2}), TaskId.SENT_HALLUC, "flat")


def test_evaluate_word_task_with_multi_index(annotated):
    instances = build_task(annotated, TaskId.WORD_HALLUC)
    index = pd.MultiIndex.from_frame(instances[["id", "word_index"]])
    scores = pd.Series(instances["label"].to_numpy(dtype=float), index=index)
    result = evaluate_instances(instances, scores, TaskId.WORD_HALLUC, "oracle")
    assert result.scores == {"eng_Latn-deu_Latn": 1.0}


def test_matched_downsample_equalizes_strata(annotated, record_factory):
    other = Corpus(
        tuple(
            record_factory(f"o{i}", "eng_Latn-deu_Latn", annotation=ann())
            for i in range(5)
        )
        + (record_factory("o9", "eng_Latn-deu_Latn", annotation=ann(Severity.WORD, tgt_span=(0, 3))),)
    )
    a, b = matched_downsample(annotated, other, seed=3)
    strata_a = sorted(stratum_of(r) for r in a)
    strata_b = sorted(stratum_of(r) for r in b)
    assert strata_a == strata_b == [(0, "flores", "eng_Latn-deu_Latn"), (1, "flores", "eng_Latn-deu_Latn")]
    assert b.by_id()["o9"] is not None
    again = matched_downsample(annotated, other, seed=3)
    assert again[0].ids == a.ids and again[1].ids == b.ids
    assert a.ids == [i for i in annotated.ids if i in set(a.ids)]


def test_report_merge_and_agreement():
    first = pd.DataFrame({"direction": ["x", MEAN_ROW], "a": [0.6, 0.6], "b": [0.8, 0.8], "c": [0.7, 0.7]})
    second = pd.DataFrame({"direction": ["x", MEAN_ROW], "a": [0.5, 0.5], "b": [0.9, 0.9], "c": [0.4, 0.4]})
    merged = merge_matrices({"synth": first, "real": second})
    assert merged["source"].tolist()[:2] == ["real", "real"]
    assert len(merged) == 12
    assert ranking_agreement(first, second) == pytest.approx(0.5)
    assert summary_rows({"real": second}) == [{"source": "real", "best_detector": "b", "best_mean": 0.9}]
