"""Detector zoo: thresholds, X-factor construction, supervised variants, OCNN."""

import numpy as np
import pytest

from fallhmm.features import ObservationSequence
from fallhmm.hmm import GaussianHmm, TrainConfig, log_likelihood
from fallhmm.models import (
    FallDetector,
    augment_transitions,
    average_models,
    build_xhmm1,
    build_xhmm2,
    build_xhmm3,
    inflate,
    train_hmm1,
    train_hmm2,
    train_hmm_normout,
    train_ocnn,
    train_supervised,
)

CFG = TrainConfig(max_iterations=5, init_iterations=1)


def seq(vectors, label="walk", subject="s1", vector_labels=None):
    return ObservationSequence(vectors=np.asarray(vectors, dtype=float), label=label,
                               subject_id=subject, vector_labels=vector_labels)


def make_training(rng, label, loc, n=6, length=10, d=2):
    return [seq(rng.normal(loc=loc, size=(length, d)), label=label) for _ in range(n)]


# ---------------------------------------------------------------------------
# HMM1 / HMM2 thresholds
# ---------------------------------------------------------------------------

def test_hmm1_training_sequences_never_fall():
    rng = np.random.default_rng(0)
    data = {"walk": make_training(rng, "walk", 0.0), "run": make_training(rng, "run", 3.0)}
    det = train_hmm1(data, n_states=2, config=CFG)
    for seqs in data.values():
        for s in seqs:
            assert not det.classify(s).is_fall


def test_hmm1_far_outlier_is_fall():
    rng = np.random.default_rng(1)
    data = {"walk": make_training(rng, "walk", 0.0), "run": make_training(rng, "run", 3.0)}
    det = train_hmm1(data, n_states=2, config=CFG)
    v = det.classify(seq(np.full((10, 2), 50.0)))
    assert v.is_fall and v.winning_label == "fall"


def test_hmm2_pooled_threshold():
    rng = np.random.default_rng(2)
    data = make_training(rng, "walk", 0.0, n=8)
    det = train_hmm2(data, n_states=2, config=CFG)
    assert not any(det.classify(s).is_fall for s in data)
    assert det.classify(seq(np.full((10, 2), 50.0))).is_fall


# ---------------------------------------------------------------------------
# XHMM1 / XHMM2
# ---------------------------------------------------------------------------

def test_xhmm1_averaging_of_means():
    m0 = GaussianHmm(prior=[1.0], trans=[[1.0]], means=[[0.0]], diag_covs=[[1.0]])
    m2 = GaussianHmm(prior=[1.0], trans=[[1.0]], means=[[2.0]], diag_covs=[[3.0]])
    avg = average_models([m0, m2])
    assert avg.means[0, 0] == 1.0
    assert avg.diag_covs[0, 0] == 2.0


def test_xhmm1_xi_one_single_activity_ties_to_normal():
    rng = np.random.default_rng(3)
    model, _ = __import__("fallhmm.hmm", fromlist=["fit"]).fit(
        make_training(rng, "walk", 0.0), 2, CFG
    )
    det = build_xhmm1({"walk": model}, xi=1.0)
    for _ in range(10):
        s = seq(rng.normal(size=(8, 2)))
        v = det.classify(s)
        assert not v.is_fall  # identical models: tie-break toward normal


def test_xhmm2_xi_one_identical_logliks():
    rng = np.random.default_rng(4)
    model, _ = __import__("fallhmm.hmm", fromlist=["fit"]).fit(
        make_training(rng, "walk", 0.0), 2, CFG
    )
    det = build_xhmm2(model, xi=1.0)
    for _ in range(5):
        s = seq(rng.normal(size=(8, 2)))
        v = det.classify(s)
        assert v.per_model_loglik["fall"] == pytest.approx(
            v.per_model_loglik["normal"], abs=1e-12
        )
        assert not v.is_fall


def test_xhmm2_observation_at_state_mean_stays_normal():
    model = GaussianHmm(prior=[1.0], trans=[[1.0]], means=[[1.5, -2.0]], diag_covs=[[1.0, 1.0]])
    for xi in (1.5, 5.0, 10.0, 100.0):
        det = build_xhmm2(model, xi)
        assert not det.classify(seq(model.means.copy())).is_fall


def test_xfactor_flag_set_shrinks_as_xi_grows():
    # the crossover radius where the inflated model overtakes the normal one
    # grows with xi, so larger xi can only clear flags, never add them
    rng = np.random.default_rng(5)
    model, _ = __import__("fallhmm.hmm", fromlist=["fit"]).fit(
        make_training(rng, "walk", 0.0, n=10), 2, CFG
    )
    tests = [seq(rng.normal(scale=3.0, size=(8, 2))) for _ in range(60)]
    flagged_prev = None
    for xi in (1.5, 5.0, 10.0, 100.0):
        det = build_xhmm2(model, xi)
        flagged = {i for i, s in enumerate(tests) if det.classify(s).is_fall}
        if flagged_prev is not None:
            assert flagged <= flagged_prev
        flagged_prev = flagged


def test_inflate_requires_xi_at_least_one():
    model = GaussianHmm(prior=[1.0], trans=[[1.0]], means=[[0.0]], diag_covs=[[1.0]])
    with pytest.raises(ValueError):
        inflate(model, 0.5)


# ---------------------------------------------------------------------------
# XHMM3
# ---------------------------------------------------------------------------

def test_augment_transitions_worked_example():
    a = np.array([[0.6, 0.4], [0.3, 0.7]])
    out = augment_transitions(a)
    np.testing.assert_allclose(out[0], [0.57, 0.38, 0.05], atol=0)
    np.testing.assert_allclose(out[1], [0.285, 0.665, 0.05], atol=0)
    np.testing.assert_allclose(out[2], [0.025, 0.025, 0.95], atol=0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_augment_transitions_random_rows_stochastic():
    rng = np.random.default_rng(6)
    for _ in range(25):
        n = int(rng.integers(2, 7))
        a = rng.dirichlet(np.ones(n), size=n)
        out = augment_transitions(a)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out[:n, n] == 0.05)
        assert out[n, n] == 0.95


def test_xhmm3_normal_vector_decodes_to_own_activity():
    rng = np.random.default_rng(7)
    runs = []
    for loc, lab in ((0.0, "a"), (6.0, "b")):
        vec = rng.normal(loc=loc, scale=0.5, size=(20, 2))
        runs.append(seq(vec, label=lab, vector_labels=(lab,) * 20))
    det = build_xhmm3(runs, xi=1.0)
    v = det.classify(seq(np.zeros((1, 2)), label="a"))
    assert not v.is_fall and v.winning_label == "a"
    v = det.classify(seq(np.full((1, 2), 6.0), label="b"))
    assert v.winning_label == "b"


def test_xhmm3_far_vector_decodes_to_fall_state():
    rng = np.random.default_rng(8)
    runs = [
        seq(rng.normal(loc=loc, scale=0.5, size=(20, 2)), label=lab, vector_labels=(lab,) * 20)
        for loc, lab in ((0.0, "a"), (6.0, "b"))
    ]
    det = build_xhmm3(runs, xi=10.0)
    v = det.classify(seq(np.full((1, 2), 3.0)))  # centroid, far from both activities
    assert v.is_fall


def test_xhmm3_single_window_activity_errors():
    runs = [
        seq(np.zeros((1, 2)), label="a", vector_labels=("a",)),
        seq(np.ones((5, 2)), label="b", vector_labels=("b",) * 5),
    ]
    with pytest.raises(ValueError, match="moments"):
        build_xhmm3(runs, xi=1.5)


# ---------------------------------------------------------------------------
# HMM_NormOut and supervised variants
# ---------------------------------------------------------------------------

def test_normout_self_consistency():
    rng = np.random.default_rng(9)
    normal = make_training(rng, "walk", 0.0, n=12)
    outliers = make_training(rng, "walk", 8.0, n=6)
    det = train_hmm_normout(normal, outliers, n_states=2, config=CFG)
    fresh = [seq(rng.normal(loc=0.0, size=(10, 2))) for _ in range(40)]
    correct = sum(not det.classify(s).is_fall for s in fresh)
    assert correct >= 38  # >= 95 %


def test_normout_empty_outliers_errors():
    rng = np.random.default_rng(10)
    with pytest.raises(ValueError, match="omega"):
        train_hmm_normout(make_training(rng, "walk", 0.0), [], config=CFG)


def test_supervised_requires_falls():
    rng = np.random.default_rng(11)
    with pytest.raises(ValueError, match="fall"):
        train_supervised("hmm2_sup", make_training(rng, "walk", 0.0), [], config=CFG)


def test_supervised_single_fall_sequence_trains():
    rng = np.random.default_rng(12)
    normal = make_training(rng, "walk", 0.0)
    fall = [seq(rng.normal(loc=6.0, size=(10, 2)), label="fall")]
    det = train_supervised("hmm2_sup", normal, fall, n_states=2, config=CFG)
    assert det.variant == "hmm2_sup"


def test_hmm3_sup_fall_state_from_real_falls():
    rng = np.random.default_rng(13)
    runs = [
        seq(rng.normal(loc=loc, scale=0.5, size=(20, 2)), label=lab, vector_labels=(lab,) * 20)
        for loc, lab in ((0.0, "a"), (6.0, "b"))
    ]
    falls = [seq(rng.normal(loc=-8.0, scale=0.5, size=(4, 2)), label="fall")]
    det = train_supervised("hmm3_sup", runs, falls)
    assert det.classify(seq(np.full((1, 2), -8.0))).is_fall
    assert not det.classify(seq(np.zeros((1, 2)))).is_fall


def test_hmm1_sup_classifies_by_argmax():
    rng = np.random.default_rng(14)
    normal = make_training(rng, "walk", 0.0) + make_training(rng, "run", 4.0)
    falls = [seq(rng.normal(loc=-6.0, size=(10, 2)), label="fall") for _ in range(4)]
    det = train_supervised("hmm1_sup", normal, falls, n_states=2, config=CFG)
    assert det.classify(seq(np.full((8, 2), -6.0))).is_fall
    assert not det.classify(seq(np.zeros((8, 2)))).is_fall


# ---------------------------------------------------------------------------
# OCNN
# ---------------------------------------------------------------------------

def test_ocnn_training_point_is_not_fall():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(30, 3))
    det = train_ocnn(x)
    assert not det.classify(seq(x[4][None, :])).is_fall


def test_ocnn_far_point_is_fall():
    rng = np.random.default_rng(16)
    x = rng.normal(size=(30, 3))
    det = train_ocnn(x)
    # distance to the hull computed by brute force: far beyond its diameter
    diameter = max(np.linalg.norm(a - b) for a in x for b in x)
    probe = x.mean(axis=0) + np.full(3, 2 * diameter)
    assert det.classify(seq(probe[None, :])).is_fall


def test_ocnn_only_k1_supported():
    with pytest.raises(ValueError):
        train_ocnn(np.zeros((5, 2)), k=3)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def roundtrip(det):
    return FallDetector.from_json(det.to_json())


def test_detector_serialization_roundtrip():
    rng = np.random.default_rng(17)
    data = {"walk": make_training(rng, "walk", 0.0), "run": make_training(rng, "run", 3.0)}
    det = train_hmm1(data, n_states=2, config=CFG)
    again = roundtrip(det)
    s = seq(rng.normal(size=(8, 2)))
    assert det.classify(s).is_fall == again.classify(s).is_fall
    assert det.thresholds == again.thresholds

    models = {lab: det.models[lab] for lab in det.models}
    x1 = build_xhmm1(models, xi=5.0)
    again = roundtrip(x1)
    assert again.xi == 5.0
    assert log_likelihood(again.fall_model, s) == pytest.approx(
        log_likelihood(x1.fall_model, s)
    )

    runs = [
        seq(rng.normal(loc=loc, size=(10, 2)), label=lab, vector_labels=(lab,) * 10)
        for loc, lab in ((0.0, "a"), (5.0, "b"))
    ]
    x3 = build_xhmm3(runs, xi=1.5)
    again = roundtrip(x3)
    assert again.activity_names == x3.activity_names

    oc = train_ocnn(rng.normal(size=(10, 2)))
    again = roundtrip(oc)
    np.testing.assert_array_equal(oc.train_vectors, again.train_vectors)
