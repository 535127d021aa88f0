from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import linprog

from src.core.errors import (
    DegenerateCalibration,
    DegenerateMass,
    EmptyReferenceSet,
    InsufficientCalibrationData,
    MissingInput,
)
from src.core.types import AttentionDistribution, Corpus
from src.detectors import attn_ot
from src.detectors.registry import score_corpus
from src.utils.config import OtConfig


def transport_cost(a, b, cost):
    n, m = len(a), len(b)
    equality = []
    for i in range(n):
        row = np.zeros((n, m))
        row[i, :] = 1
        equality.append(row.ravel())
    for j in range(m):
        col = np.zeros((n, m))
        col[:, j] = 1
        equality.append(col.ravel())
    result = linprog(cost.ravel(), A_eq=np.array(equality), b_eq=np.concatenate([a, b]), bounds=(0, None))
    return result.fun


def test_wass_to_unif_matches_transport_with_unit_cost():
    rng = np.random.default_rng(3)
    for n in (2, 3, 5):
        mass = rng.dirichlet(np.ones(n))
        uniform = np.full(n, 1.0 / n)
        expected = transport_cost(mass, uniform, 1.0 - np.eye(n))
        assert attn_ot.wass_to_unif(mass) == pytest.approx(expected, abs=1e-9)


def test_wass_to_unif_bounds():
    assert attn_ot.wass_to_unif([0.25, 0.25, 0.25, 0.25]) == 0.0
    assert attn_ot.wass_to_unif([1.0, 0.0, 0.0, 0.0]) == pytest.approx(0.75)


def test_wass1_positions_is_a_metric():
    rng = np.random.default_rng(11)
    for _ in range(200):
        a, b, c = (rng.dirichlet(np.ones(int(rng.integers(1, 12)))) for _ in range(3))
        ab, bc, ac = attn_ot.wass1_positions(a, b), attn_ot.wass1_positions(b, c), attn_ot.wass1_positions(a, c)
        assert ab == pytest.approx(attn_ot.wass1_positions(b, a), abs=1e-12)
        assert ac <= ab + bc + 1e-9
        assert attn_ot.wass1_positions(a, a) == pytest.approx(0.0, abs=1e-12)
    assert attn_ot.wass1_positions([1.0], [0.5, 0.5]) == pytest.approx(0.25)


def test_wass_to_unif_never_increases_when_mixed_toward_uniform():
    rng = np.random.default_rng(12)
    for _ in range(200):
        n = int(rng.integers(2, 15))
        mass = rng.dirichlet(np.ones(n) * 0.3)
        uniform = np.full(n, 1.0 / n)
        scores = [attn_ot.wass_to_unif((1 - t) * mass + t * uniform) for t in np.linspace(0, 1, 11)]
        assert np.all(np.diff(scores) <= 1e-12)
        assert scores[-1] == pytest.approx(0.0, abs=1e-15)


def test_attention_distribution_drops_eos(record_factory):
    record = record_factory()
    dist = attn_ot.attention_distribution(record, drop_eos=True)
    assert not dist.has_eos
    assert dist.mass.tolist() == pytest.approx([0.25] * 4)
    kept = attn_ot.attention_distribution(record, drop_eos=False)
    assert kept.has_eos and len(kept) == 5


def test_attention_distribution_errors(record_factory):
    with pytest.raises(MissingInput):
        attn_ot.attention_distribution(record_factory(attn=False), drop_eos=False)
    without_eos = replace(record_factory(), attn=AttentionDistribution(np.full(4, 0.25)))
    with pytest.raises(MissingInput):
        attn_ot.attention_distribution(without_eos, drop_eos=True)
    all_eos = replace(record_factory(), attn=AttentionDistribution(np.array([0.0, 0.0, 0.0, 0.0, 1.0]), has_eos=True))
    with pytest.raises(DegenerateMass):
        attn_ot.attention_distribution(all_eos, drop_eos=True)


def test_reference_set_drops_worst_records_per_criterion(record_factory):
    records = [record_factory(f"r{i}", logprob=-0.1 * (i + 1)) for i in range(10)]
    refs = attn_ot.build_reference_set(Corpus(tuple(records)), drop_eos=False)
    ref = refs["eng_Latn-deu_Latn"]
    # ties on length ratio drop the smallest ids, log-probability drops the least likely
    assert ref.ids == ("r2", "r3", "r4", "r5", "r6", "r7")
    assert ref.source_lengths == (4,) * 6


def test_reference_set_needs_records(record_factory):
    corpus = Corpus((record_factory("a"),))
    with pytest.raises(EmptyReferenceSet):
        attn_ot.build_reference_set(corpus, False, OtConfig(reference_drop_fraction=0.5))


def test_wass_to_data_uses_bottom_k_of_length_window():
    ref = attn_ot.ReferenceSet(
        "eng_Latn-deu_Latn",
        (np.array([0.5, 0.5]), np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.25] * 4)),
        (2, 2, 2, 4),
    )
    query = np.array([0.5, 0.5])
    assert attn_ot.wass_to_data(query, ref, k=1) == 0.0
    expected = np.mean([0.0, 0.25, 0.25])
    assert attn_ot.wass_to_data(query, ref, k=3) == pytest.approx(expected)
    # fewer than k candidates in the window falls back to the whole set
    all_four = np.mean(sorted(attn_ot.wass1_positions(query, d) for d in ref.distributions))
    assert attn_ot.wass_to_data(query, ref, k=4) == pytest.approx(all_four)


def calibration(**overrides):
    values = dict(
        direction="eng_Latn-deu_Latn",
        q1_wtu=0.0,
        q99_wtu=1.0,
        q1_wtd=0.0,
        q99_wtd=2.0,
        sd_wtu=1.0,
        sd_wtd=3.0,
        tau=0.5,
    )
    values.update(overrides)
    return attn_ot.Calibration(**values)


def test_combo_switches_to_rescaled_wtu_above_tau():
    cal = calibration()
    assert attn_ot.combine_wass_scores(0.8, 0.1, cal) == pytest.approx(1.6)
    assert attn_ot.combine_wass_scores(0.3, 0.1, cal) == 0.1
    with pytest.raises(DegenerateCalibration):
        attn_ot.combine_wass_scores(0.8, 0.1, calibration(q99_wtu=0.0))


def test_mean_weights_by_inverse_spread():
    assert attn_ot.mean_wass_scores(1.0, 0.0, calibration()) == pytest.approx(0.75)


def test_calibration_needs_enough_spread_and_records():
    with pytest.raises(InsufficientCalibrationData):
        attn_ot.calibration_from_scores([0.1, 0.2], [0.1, 0.3], "eng_Latn-deu_Latn")
    with pytest.raises(DegenerateCalibration):
        attn_ot.calibration_from_scores([0.1] * 20, np.linspace(0, 1, 20), "eng_Latn-deu_Latn")
    cal = attn_ot.calibration_from_scores(np.linspace(0, 1, 101), np.linspace(0, 2, 101), "eng_Latn-deu_Latn")
    assert cal.q1_wtu == pytest.approx(0.01)
    assert cal.q99_wtd == pytest.approx(1.98)
    assert cal.tau == pytest.approx(0.99)
    assert cal.n_records == 101


def test_calibration_bundle_file(tmp_path):
    bundle = attn_ot.CalibrationBundle(calibrations=[calibration(), calibration(drop_eos=True, tau=0.7)])
    path = tmp_path / "calib.json"
    attn_ot.save_calibrations(bundle, path)
    loaded = attn_ot.load_calibrations(path)
    assert loaded.lookup("eng_Latn-deu_Latn", True).tau == 0.7
    assert loaded.lookup("eng_Latn-yor_Latn", False) is None


def test_ot_detectors_end_to_end(synth_corpus):
    ids = sorted(synth_corpus.ids)
    reference = synth_corpus.filter(lambda r: ids.index(r.id) % 2 == 0)
    held_out = synth_corpus.filter(lambda r: ids.index(r.id) % 2 == 1)
    ctx = attn_ot.OtContext.build(reference, {False, True}, OtConfig(), calibration_corpus=held_out)
    assert sorted(ctx.calibrations) == [
        ("eng_Latn-deu_Latn", False),
        ("eng_Latn-deu_Latn", True),
        ("eng_Latn-yor_Latn", False),
        ("eng_Latn-yor_Latn", True),
    ]
    detectors = ["wass_to_unif", "wass_to_data", "wass_combo", "wass_mean_noeos"]
    table = score_corpus(held_out, detectors, ctx)
    assert not table[detectors].isna().any().any()
    assert (table["wass_to_data"] >= 0).all()


def test_wass_to_data_without_reference_is_missing(record_factory):
    table = score_corpus(Corpus((record_factory("a"),)), ["wass_to_data"])
    assert table["wass_to_data"].isna().all()


def test_wass1_positions_matches_transport_on_small_supports():
    rng = np.random.default_rng(5)
    for _ in range(500):
        n, m = rng.integers(1, 7, size=2)
        a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
        pos_a, pos_b = (np.arange(n) + 0.5) / n, (np.arange(m) + 0.5) / m
        cost = np.abs(pos_a[:, None] - pos_b[None, :])
        assert attn_ot.wass1_positions(a, b) == pytest.approx(transport_cost(a, b, cost), abs=1e-9)


@pytest.mark.parametrize("n", range(2, 11))
def test_wass_to_unif_of_one_hot(n):
    mass = np.zeros(n)
    mass[n // 2] = 1.0
    assert attn_ot.wass_to_unif(mass) == pytest.approx((n - 1) / n, abs=1e-15)


def test_combo_maps_calibration_quantiles_onto_wtd_scale():
    cal = calibration(q1_wtu=0.2, q99_wtu=0.7, q1_wtd=0.05, q99_wtd=0.4, tau=0.1)
    assert attn_ot.combine_wass_scores(0.2, 9.0, cal) == pytest.approx(0.05, abs=1e-12)
    assert attn_ot.combine_wass_scores(0.7, 9.0, cal) == pytest.approx(0.4, abs=1e-12)


def test_mean_of_equal_spreads_is_plain_average():
    cal = calibration(sd_wtu=0.3, sd_wtd=0.3)
    assert attn_ot.mean_wass_scores(0.2, 0.8, cal) == pytest.approx(0.5)
    # weights sum to one: equal inputs come back unchanged
    assert attn_ot.mean_wass_scores(0.4, 0.4, calibration()) == pytest.approx(0.4)


def test_loaded_calibration_fixes_bottom_k_and_window(synth_corpus):
    ids = sorted(synth_corpus.ids)
    reference = synth_corpus.filter(lambda r: ids.index(r.id) % 2 == 0)
    held_out = synth_corpus.filter(lambda r: ids.index(r.id) % 2 == 1)
    fitted_config = OtConfig(bottom_k=1, length_window=2.0)
    fitted = attn_ot.OtContext.build(reference, {False}, fitted_config, calibration_corpus=held_out)
    reloaded = attn_ot.OtContext.build(reference, {False}, OtConfig(bottom_k=4), bundle=fitted.bundle())
    record = next(iter(held_out))
    assert reloaded.wtd_params(str(record.direction), False) == (1, 2.0)
    ref = reloaded.references[(str(record.direction), False)]
    dist = attn_ot.attention_distribution(record, False)
    expected = attn_ot.wass_to_data(dist, ref, 1, 2.0, len(record.src_tokens))
    assert reloaded.raw_scores(record, False, "wass_combo") == fitted.raw_scores(record, False, "wass_combo")
    assert reloaded.raw_scores(record, False, "wass_combo")[1] == expected
