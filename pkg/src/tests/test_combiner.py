import numpy as np
import pandas as pd
import pytest
from sklearn.linear_model import LogisticRegression

from src.combiner.crossval import assign_folds, crossval_combine
from src.combiner.logreg import fit_logreg, load_model_file, save_model
from src.core.errors import ConstantFeature, DidNotConverge, MissingFeature, NonBinaryLabels, TooFewGroups
from src.core.types import Side
from src.detectors.word import HALLUC_FEATURES, word_feature_table
from src.evaluation.metrics import roc_auc
from src.evaluation.tasks import TaskId, evaluate, score_series
from src.synth.generator import generate_corpus
from src.utils.config import CombinerConfig


def toy_data(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3)) * [1.0, 5.0, 0.1] + [0.0, 2.0, 0.0]
    logits = 1.5 * X[:, 0] - 0.3 * (X[:, 1] - 2.0) + 8.0 * X[:, 2]
    y = (rng.random(n) < 1 / (1 + np.exp(-logits))).astype(float)
    assert 0 < y.mean() < 1
    return X, y


@pytest.mark.parametrize("lam", [1.0, 0.1, 0.01])
def test_fit_matches_reference_solver(lam):
    X, y = toy_data()
    model = fit_logreg(X, y, lam=lam, tol=1e-10, max_iter=5000)
    assert model.converged
    Z = (X - X.mean(axis=0)) / X.std(axis=0)
    reference = LogisticRegression(C=1.0 / (lam * len(y)), tol=1e-12, max_iter=10000).fit(Z, y)
    np.testing.assert_allclose(model.weights, reference.coef_[0], atol=1e-5)
    assert model.bias == pytest.approx(reference.intercept_[0], abs=1e-5)


def test_loss_never_increases():
    X, y = toy_data(seed=1)
    model = fit_logreg(X, y, lam=0.05)
    history = np.array(model.loss_history)
    assert np.all(np.diff(history) <= 1e-15)


def test_decision_function_is_log_odds():
    X, y = toy_data(seed=2)
    model = fit_logreg(X, y)
    scores = model.decision_function(X)
    np.testing.assert_allclose(model.predict_proba(X), 1 / (1 + np.exp(-scores)))
    weights, bias = model.raw_coefficients()
    np.testing.assert_allclose(X @ weights + bias, scores, atol=1e-10)


def test_fit_errors():
    X, y = toy_data(n=20)
    with pytest.raises(NonBinaryLabels):
        fit_logreg(X, y * 2)
    with pytest.raises(ConstantFeature) as info:
        fit_logreg(np.column_stack([X[:, 0], np.ones(20)]), y, feature_names=["a", "flat"])
    assert "flat" in str(info.value)
    with pytest.raises(DidNotConverge):
        fit_logreg(X, y, lam=0.001, tol=1e-14, max_iter=1, strict=True)


def test_model_file(tmp_path):
    X, y = toy_data(n=50)
    model = fit_logreg(X, y, feature_names=["a", "b", "c"], seed=3)
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model_file(path)
    assert loaded.feature_names == ["a", "b", "c"]
    np.testing.assert_allclose(loaded.decision_function(X), model.decision_function(X))
    assert loaded.loss_history == []


def test_folds_keep_groups_together_and_balance_sizes():
    groups = [f"g{i}" for i in range(10) for _ in range(3)]
    assignment = assign_folds(groups, 3, seed=5)
    rows = assignment.row_folds(groups)
    for g in set(groups):
        assert len({int(f) for f, gg in zip(rows, groups) if gg == g}) == 1
    assert sorted(np.bincount(rows).tolist()) == [9, 9, 12]
    assert assign_folds(groups, 3, seed=5).folds == assignment.folds
    with pytest.raises(TooFewGroups):
        assign_folds(["a", "b"], 3, seed=0)


def word_frame(n_groups=30, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for g in range(n_groups):
        for w in range(6):
            label = int(rng.random() < 0.3)
            rows.append(
                {
                    "id": f"rec{g:03d}",
                    "word_index": w,
                    "f1": label * 2.0 + rng.normal(),
                    "f2": label * 1.0 + rng.normal(),
                    "gold_label": label,
                }
            )
    frame = pd.DataFrame(rows)
    frame["gold_label"] = frame["gold_label"].astype("Int64")
    return frame


def test_crossval_out_of_fold_scores():
    frame = word_frame()
    config = CombinerConfig(folds=3)
    result = crossval_combine(frame, ["f1", "f2"], seed=4, config=config)
    assert result.oof.shape == (len(frame),)
    assert np.isfinite(result.oof).all()
    assert len(result.fold_models) == 3
    # every row scored by the model that never saw its group
    rows = result.assignment.row_folds(frame["id"].tolist())
    for fold, model in enumerate(result.fold_models):
        test = rows == fold
        np.testing.assert_allclose(result.oof[test], model.decision_function(frame.loc[test, ["f1", "f2"]].to_numpy()))
    again = crossval_combine(frame, ["f1", "f2"], seed=4, config=config, threads=3)
    np.testing.assert_array_equal(result.oof, again.oof)
    assert result.model.weights[0] > 0 and result.model.weights[1] > 0


def test_crossval_rejects_missing_features():
    frame = word_frame(n_groups=6)
    frame.loc[3, "f2"] = np.nan
    with pytest.raises(MissingFeature):
        crossval_combine(frame, ["f1", "f2"], seed=0)
    with pytest.raises(MissingFeature):
        crossval_combine(frame, ["f1", "absent"], seed=0)


def test_combination_beats_single_features_on_synthetic_words():
    config = {
        "directions": ["eng_Latn-deu_Latn", "eng_Latn-yor_Latn"],
        "records_per_direction": 150,
        "halluc_mixture": {"Word": 0.15, "Partial": 0.15},
    }
    corpus = generate_corpus(config, seed=21)
    table = word_feature_table(corpus, Side.TARGET).frame
    result = crossval_combine(table, list(HALLUC_FEATURES), seed=0)
    combined = pd.Series(result.oof, index=pd.MultiIndex.from_frame(table[["id", "word_index"]]))
    combo = evaluate(corpus, "combo", TaskId.WORD_HALLUC, combined).mean
    best_single = max(
        evaluate(corpus, f, TaskId.WORD_HALLUC, score_series(table, f, TaskId.WORD_HALLUC)).mean
        for f in HALLUC_FEATURES
    )
    assert combo >= 0.95
    assert combo >= best_single + 0.01


def test_fit_recovers_planted_weights():
    rng = np.random.default_rng(8)
    planted = np.array([2.0, -1.0, 0.0, 0.5])
    X = rng.normal(size=(2000, 4))
    y = (rng.random(2000) < 1 / (1 + np.exp(-(X @ planted)))).astype(float)
    model = fit_logreg(X, y, lam=1e-3, tol=1e-8, max_iter=5000)
    weights, bias = model.raw_coefficients()
    np.testing.assert_allclose(weights, planted, atol=0.15)
    assert abs(bias) < 0.15


def test_folds_never_split_a_group_at_scale():
    rng = np.random.default_rng(9)
    groups = [f"g{int(g):03d}" for g in rng.integers(0, 300, 10_000)]
    assignment = assign_folds(groups, 5, seed=1)
    rows = assignment.row_folds(groups)
    frame = pd.DataFrame({"group": groups, "fold": rows})
    assert (frame.groupby("group")["fold"].nunique() == 1).all()
    for fold in range(5):
        train = set(frame.loc[frame["fold"] != fold, "group"])
        test = set(frame.loc[frame["fold"] == fold, "group"])
        assert not train & test
    totals = np.bincount(rows)
    assert totals.max() - totals.min() <= frame["group"].value_counts().max()


def test_fold_standardization_ignores_test_rows():
    frame = word_frame()
    result = crossval_combine(frame, ["f1", "f2"], seed=4)
    rows = result.assignment.row_folds(frame["id"].tolist())
    perturbed = frame.copy()
    target = int(np.flatnonzero(rows == 0)[0])
    perturbed.loc[target, ["f1", "f2"]] += 100.0
    again = crossval_combine(perturbed, ["f1", "f2"], seed=4)
    assert again.fold_models[0].mean == result.fold_models[0].mean
    assert again.fold_models[0].scale == result.fold_models[0].scale
    assert again.fold_models[1].mean != result.fold_models[1].mean
    for model in result.fold_models + [result.model]:
        assert np.all(np.diff(model.loss_history) <= 1e-15)


def test_shuffled_labels_give_chance_out_of_fold_auc():
    aucs = []
    for seed in range(20):
        frame = word_frame(n_groups=500, seed=seed)
        shuffled = np.random.default_rng(100 + seed).permutation(frame["gold_label"].to_numpy())
        frame["gold_label"] = pd.array(shuffled, dtype="Int64")
        result = crossval_combine(frame, ["f1", "f2"], seed=seed)
        aucs.append(roc_auc(result.oof, frame["gold_label"].to_numpy(dtype=int)))
    assert 0.45 <= np.mean(aucs) <= 0.55


def test_unconverged_folds_are_reported():
    frame = word_frame()
    result = crossval_combine(frame, ["f1", "f2"], seed=4, config=CombinerConfig(max_iter=1, tol=1e-14))
    assert not result.converged
    assert result.unconverged_folds == [0, 1, 2]
    assert crossval_combine(frame, ["f1", "f2"], seed=4).converged
