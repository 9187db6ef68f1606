"""HMM core: oracle equivalence, EM properties, serialization."""

import itertools

import numpy as np
import pytest

from fallhmm.hmm import (
    GaussianHmm,
    TrainConfig,
    baum_welch,
    ergodic_transitions,
    fit,
    init_from_segments,
    log_likelihood,
    viterbi,
)
from fallhmm.hmm import _pykernels


def random_model(rng, n_states, n_dims):
    prior = rng.dirichlet(np.ones(n_states))
    trans = rng.dirichlet(np.ones(n_states), size=n_states)
    means = rng.normal(scale=3.0, size=(n_states, n_dims))
    covs = rng.uniform(0.2, 4.0, size=(n_states, n_dims))
    return GaussianHmm(prior=prior, trans=trans, means=means, diag_covs=covs)


def gaussian_logpdf(x, mean, cov):
    return float(-0.5 * np.sum(np.log(2 * np.pi * cov) + (x - mean) ** 2 / cov))


def brute_force_loglik(model, obs):
    """Exhaustive sum over all N^T hidden paths."""
    T = obs.shape[0]
    n = model.n_states
    total = -np.inf
    for path in itertools.product(range(n), repeat=T):
        lp = np.log(model.prior[path[0]])
        lp += gaussian_logpdf(obs[0], model.means[path[0]], model.diag_covs[path[0]])
        for t in range(1, T):
            lp += np.log(model.trans[path[t - 1], path[t]])
            lp += gaussian_logpdf(obs[t], model.means[path[t]], model.diag_covs[path[t]])
        total = np.logaddexp(total, lp)
    return total


def brute_force_viterbi(model, obs):
    """Exhaustive argmax over paths; first path in lexicographic order wins ties."""
    T = obs.shape[0]
    best_path, best_lp = None, -np.inf
    for path in itertools.product(range(model.n_states), repeat=T):
        lp = np.log(model.prior[path[0]])
        lp += gaussian_logpdf(obs[0], model.means[path[0]], model.diag_covs[path[0]])
        for t in range(1, T):
            lp += np.log(model.trans[path[t - 1], path[t]])
            lp += gaussian_logpdf(obs[t], model.means[path[t]], model.diag_covs[path[t]])
        if lp > best_lp:
            best_lp, best_path = lp, path
    return np.array(best_path), best_lp


@pytest.mark.parametrize("seed", range(20))
def test_forward_matches_path_enumeration(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, rng.integers(1, 4), rng.integers(1, 3))
    obs = rng.normal(scale=3.0, size=(rng.integers(1, 7), model.n_dims))
    assert log_likelihood(model, obs) == pytest.approx(brute_force_loglik(model, obs), abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_viterbi_matches_path_enumeration(seed):
    rng = np.random.default_rng(seed + 1000)
    model = random_model(rng, rng.integers(1, 4), rng.integers(1, 3))
    obs = rng.normal(scale=3.0, size=(rng.integers(1, 7), model.n_dims))
    path, score = viterbi(model, obs)
    ref_path, ref_score = brute_force_viterbi(model, obs)
    assert np.array_equal(path, ref_path)
    assert score == pytest.approx(ref_score, abs=1e-9)


def test_single_state_loglik_is_sum_of_gaussians():
    model = GaussianHmm(prior=[1.0], trans=[[1.0]], means=[[2.0, -1.0]], diag_covs=[[0.5, 2.0]])
    obs = np.array([[2.0, -1.0], [1.0, 0.0], [3.0, -2.0]])
    expected = sum(gaussian_logpdf(o, model.means[0], model.diag_covs[0]) for o in obs)
    assert log_likelihood(model, obs) == pytest.approx(expected, abs=1e-12)


def test_single_state_viterbi_path_all_zero():
    model = GaussianHmm(prior=[1.0], trans=[[1.0]], means=[[0.0]], diag_covs=[[1.0]])
    path, _ = viterbi(model, np.zeros((5, 1)))
    assert np.array_equal(path, np.zeros(5, dtype=int))


def test_viterbi_two_separated_states():
    model = GaussianHmm(
        prior=[0.5, 0.5], trans=[[0.9, 0.1], [0.5, 0.5]],
        means=[[0.0], [10.0]], diag_covs=[[1.0], [1.0]],
    )
    path, _ = viterbi(model, np.array([[0.0], [10.0], [0.0]]))
    assert np.array_equal(path, [0, 1, 0])


def test_in_model_data_scores_higher_than_far_data():
    model = GaussianHmm(prior=[1.0], trans=[[1.0]], means=[[0.0]], diag_covs=[[1.0]])
    near = np.zeros((10, 1))
    far = np.full((10, 1), 10.0)  # mu + 10 sigma
    assert log_likelihood(model, near) / 10 > log_likelihood(model, far) / 10


def test_viterbi_score_never_exceeds_forward_loglik():
    rng = np.random.default_rng(7)
    for _ in range(20):
        model = random_model(rng, 3, 2)
        obs = rng.normal(size=(12, 2))
        _, score = viterbi(model, obs)
        assert score <= log_likelihood(model, obs) + 1e-12


def test_loglik_invariant_under_state_relabelling():
    rng = np.random.default_rng(11)
    model = random_model(rng, 3, 2)
    obs = rng.normal(size=(10, 2))
    perm = np.array([2, 0, 1])
    shuffled = GaussianHmm(
        prior=model.prior[perm],
        trans=model.trans[np.ix_(perm, perm)],
        means=model.means[perm],
        diag_covs=model.diag_covs[perm],
    )
    assert log_likelihood(model, obs) == pytest.approx(log_likelihood(shuffled, obs), abs=1e-12)


def test_backend_equivalence():
    """Compiled kernels must match the pure-Python reference."""
    from fallhmm.hmm import _backend

    rng = np.random.default_rng(3)
    model = random_model(rng, 4, 3)
    obs = rng.normal(size=(30, 3))
    log_pi, log_trans = model.log_space()
    log_obs = _pykernels.gaussian_log_obs(obs, model.means, model.diag_covs)
    a1, l1 = _backend.forward(log_pi, log_trans, log_obs)
    a2, l2 = _pykernels.forward(log_pi, log_trans, log_obs)
    np.testing.assert_allclose(a1, a2, atol=1e-10)
    assert l1 == pytest.approx(l2, abs=1e-10)
    np.testing.assert_allclose(_backend.backward(log_trans, log_obs),
                               _pykernels.backward(log_trans, log_obs), atol=1e-10)
    p1, s1 = _backend.viterbi(log_pi, log_trans, log_obs)
    p2, s2 = _pykernels.viterbi(log_pi, log_trans, log_obs)
    assert np.array_equal(p1, p2)
    assert s1 == pytest.approx(s2, abs=1e-10)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def test_init_single_state_uses_global_moments():
    rng = np.random.default_rng(0)
    seqs = [rng.normal(loc=2.0, size=(15, 2)) for _ in range(3)]
    cfg = TrainConfig(init_iterations=0)
    model = init_from_segments(seqs, 1, cfg)
    top5 = np.concatenate(seqs[:3])
    np.testing.assert_allclose(model.means[0], top5.mean(axis=0), atol=1e-12)
    assert np.array_equal(model.trans, [[1.0]])


def test_init_transition_constants():
    model = ergodic_transitions(4)
    assert np.all(model[~np.eye(4, dtype=bool)] == 0.025)
    assert np.allclose(np.diag(model), 0.925)


def test_init_constant_data_clamps_covariance_to_floor():
    v = np.array([1.0, -2.0])
    seq = np.tile(v, (8, 1))
    model = init_from_segments([seq], 2, TrainConfig(init_iterations=0))
    np.testing.assert_allclose(model.means, np.tile(v, (2, 1)))
    assert np.all(model.diag_covs == 0.01)


def test_init_requires_long_enough_sequence():
    with pytest.raises(ValueError):
        init_from_segments([np.zeros((2, 1))], 4)


# ---------------------------------------------------------------------------
# Baum-Welch
# ---------------------------------------------------------------------------

def test_bw_trace_non_decreasing_and_covs_clamped():
    rng = np.random.default_rng(5)
    seqs = [rng.normal(size=(30, 2)) for _ in range(4)]
    model = init_from_segments(seqs, 3, TrainConfig(init_iterations=0))
    model, trace = baum_welch(model, seqs, TrainConfig(max_iterations=15))
    assert all(b - a >= -1e-8 for a, b in zip(trace, trace[1:]))
    assert np.all(model.diag_covs >= 0.01 - 1e-15)
    assert np.all(model.diag_covs <= 100 + 1e-13)


def test_bw_single_state_recovers_sample_mean():
    rng = np.random.default_rng(9)
    data = rng.normal(loc=1.5, scale=0.8, size=(400, 1))
    model, _ = fit([data], 1, TrainConfig(max_iterations=5))
    stderr = data.std() / np.sqrt(len(data))
    assert abs(model.means[0, 0] - data.mean()) < 3 * stderr
    assert model.diag_covs[0, 0] == pytest.approx(data.var(), rel=1e-6)


def test_bw_constant_data_pins_covariance_at_floor():
    seqs = [np.full((10, 1), 3.0)]
    model, _ = fit(seqs, 2, TrainConfig())
    assert np.all(model.diag_covs == 0.01)


def test_bw_rows_stochastic_after_every_iteration():
    rng = np.random.default_rng(13)
    seqs = [rng.normal(size=(25, 2)) for _ in range(3)]
    model = init_from_segments(seqs, 3, TrainConfig(init_iterations=0))
    for _ in range(5):
        model, _ = baum_welch(model, seqs, TrainConfig(max_iterations=1, loglik_tolerance=-1))
        assert np.allclose(model.trans.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(model.trans >= 0)
        assert model.prior.sum() == pytest.approx(1.0, abs=1e-9)


def test_bw_empty_training_set_errors():
    model = GaussianHmm(prior=[1.0], trans=[[1.0]], means=[[0.0]], diag_covs=[[1.0]])
    with pytest.raises(ValueError):
        baum_welch(model, [], TrainConfig())


def test_dimension_mismatch_errors():
    model = GaussianHmm(prior=[1.0], trans=[[1.0]], means=[[0.0, 0.0]], diag_covs=[[1.0, 1.0]])
    with pytest.raises(ValueError):
        log_likelihood(model, np.zeros((4, 3)))
    with pytest.raises(ValueError):
        viterbi(model, np.zeros((4, 3)))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_model_json_roundtrip_bit_faithful():
    rng = np.random.default_rng(21)
    model = random_model(rng, 3, 4)
    again = GaussianHmm.from_json(model.to_json())
    assert np.array_equal(model.prior, again.prior)
    assert np.array_equal(model.trans, again.trans)
    assert np.array_equal(model.means, again.means)
    assert np.array_equal(model.diag_covs, again.diag_covs)


def test_model_rejects_unknown_format_version():
    d = GaussianHmm(prior=[1.0], trans=[[1.0]], means=[[0.0]], diag_covs=[[1.0]]).to_dict()
    d["format_version"] = 99
    with pytest.raises(ValueError):
        GaussianHmm.from_dict(d)
