"""Ensemble aggregation and class-wise uncertainty against brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gauda.ensemble import (ABSENT, EnsembleModel, PosteriorSet, UntrainedError,
                            class_uncertainty, init_ensemble, load_ensemble,
                            mean_prediction, predict_posterior, save_ensemble)
from gauda.rng import RngStream


def random_posterior(rng, k, units, classes):
    raw = rng.uniform((k, units, classes)) + 1e-3
    return PosteriorSet(raw / raw.sum(axis=-1, keepdims=True))


def brute_force_uncertainty(ps: PosteriorSet) -> dict:
    preds = ps.predictions
    k, units, classes = preds.shape
    final = preds.mean(axis=0)
    per_class: dict[int, list[float]] = {c: [] for c in range(classes)}
    for u in range(units):
        c = int(np.argmax(final[u]))
        vals = [preds[m, u, c] for m in range(k)]
        mu = sum(vals) / k
        per_class[c].append(sum((v - mu) ** 2 for v in vals) / k)
    return {c: (sum(v) / len(v) if v else ABSENT) for c, v in per_class.items()}


def test_mean_prediction_matches_elementwise_average():
    ps = random_posterior(RngStream(0), 5, 7, 3)
    np.testing.assert_allclose(mean_prediction(ps), ps.predictions.mean(axis=0),
                               atol=1e-15)


@given(st.integers(0, 10_000), st.integers(2, 7), st.integers(1, 12), st.integers(2, 5))
@settings(max_examples=60, deadline=None)
def test_uncertainty_matches_brute_force(seed, k, units, classes):
    ps = random_posterior(RngStream(seed), k, units, classes)
    got = class_uncertainty(ps)
    want = brute_force_uncertainty(ps)
    assert set(got) == set(want)
    for c in got:
        if want[c] is ABSENT:
            assert got[c] == ABSENT
        else:
            assert got[c] == pytest.approx(want[c], abs=1e-12)


def test_two_member_maximal_disagreement_hits_quarter():
    # one member certain (p=1), the other fully against (p=0): variance 0.25
    preds = np.zeros((2, 1, 2))
    preds[0, 0] = [1.0, 0.0]
    preds[1, 0] = [0.0, 1.0]
    ue = class_uncertainty(PosteriorSet(preds))
    predicted = [c for c, v in ue.items() if v != ABSENT]
    assert len(predicted) == 1
    assert ue[predicted[0]] == pytest.approx(0.25, abs=1e-15)


def test_agreeing_members_have_zero_uncertainty():
    row = np.array([[0.7, 0.2, 0.1]])
    preds = np.stack([row, row, row])
    ue = class_uncertainty(PosteriorSet(preds))
    assert ue[0] == pytest.approx(0.0, abs=1e-15)
    assert ue[1] == ABSENT and ue[2] == ABSENT


def test_uncertainty_invariant_to_member_order():
    ps = random_posterior(RngStream(3), 6, 9, 4)
    base = class_uncertainty(ps)
    perm = class_uncertainty(PosteriorSet(ps.predictions[::-1].copy()))
    for c in base:
        assert base[c] == pytest.approx(perm[c], abs=1e-15) or (
            base[c] == ABSENT and perm[c] == ABSENT)


@given(st.integers(0, 10_000))
@settings(max_examples=200, deadline=None)
def test_uncertainty_range_under_fuzzing(seed):
    rng = RngStream(seed)
    k = 2 + int(rng.integers(6))
    units = 1 + int(rng.integers(20))
    classes = 2 + int(rng.integers(4))
    ue = class_uncertainty(random_posterior(rng, k, units, classes))
    for v in ue.values():
        assert v == ABSENT or 0.0 <= v <= 0.25


def test_uncertainty_requires_two_members():
    ps = PosteriorSet(np.ones((1, 3, 2)) * 0.5)
    with pytest.raises(ValueError):
        class_uncertainty(ps)


def test_posterior_rows_must_sum_to_one():
    with pytest.raises(ValueError):
        PosteriorSet(np.full((2, 2, 2), 0.3))


def test_segmentation_posterior_shape_and_prediction_flow():
    rng = RngStream(5)
    ens = init_ensemble(3, (2 * 4 * 4, 16, 4 * 4 * 3), "segmentation", 3,
                        rng, h=4, w=4).mark_trained()
    x = rng.gaussian((2, 2, 4, 4))
    ps = predict_posterior(ens, x)
    assert ps.predictions.shape == (3, 2, 16, 3)
    np.testing.assert_allclose(ps.predictions.sum(axis=-1), 1.0, atol=1e-9)


def test_classification_posterior_and_untrained_guard():
    rng = RngStream(6)
    ens = init_ensemble(4, (3, 8, 2), "classification", 2, rng)
    x = rng.gaussian((5, 3))
    with pytest.raises(UntrainedError):
        predict_posterior(ens, x)
    ps = predict_posterior(ens.mark_trained(), x)
    assert ps.predictions.shape == (4, 5, 2)


def test_members_are_independently_initialised():
    ens = init_ensemble(3, (4, 8, 2), "classification", 2, RngStream(9))
    w0 = ens.members[0].weights[0]
    assert not np.array_equal(w0, ens.members[1].weights[0])
    again = init_ensemble(3, (4, 8, 2), "classification", 2, RngStream(9))
    np.testing.assert_array_equal(w0, again.members[0].weights[0])


def test_ensemble_structural_validation():
    member = init_ensemble(2, (3, 4, 2), "classification", 2, RngStream(0)).members[0]
    with pytest.raises(ValueError):
        EnsembleModel((member,), "classification", 2)
    with pytest.raises(ValueError):
        EnsembleModel((member, member), "regression", 2)


def test_ensemble_checkpoint_round_trip(tmp_path):
    ens = init_ensemble(3, (4, 6, 2), "classification", 2, RngStream(2)).mark_trained()
    save_ensemble(ens, tmp_path / "ens")
    back = load_ensemble(tmp_path / "ens")
    assert back.k == 3 and back.trained and back.task == "classification"
    for a, b in zip(back.members, ens.members):
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)
