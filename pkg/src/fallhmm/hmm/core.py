"""Gaussian-emission HMM: representation, initialization, training, scoring.

Ergodic HMMs with a single diagonal-covariance Gaussian per state.  Training
is Baum-Welch over multiple sequences with the covariance diagonal clamped to
``[var_floor, var_ceil]`` after every M-step.
"""

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from . import _backend

logger = logging.getLogger(__name__)

VAR_FLOOR = 0.01
VAR_CEIL = 100.0
OFF_DIAGONAL_INIT = 0.025

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GaussianHmm:
    """lambda = (pi, A, {mu_j, Sigma_j}) with diagonal Sigma."""

    prior: np.ndarray      # (N,)
    trans: np.ndarray      # (N, N) row-stochastic
    means: np.ndarray      # (N, D)
    diag_covs: np.ndarray  # (N, D) positive

    def __post_init__(self):
        object.__setattr__(self, "prior", np.asarray(self.prior, dtype=np.float64))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=np.float64))
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=np.float64)))
        object.__setattr__(self, "diag_covs", np.atleast_2d(np.asarray(self.diag_covs, dtype=np.float64)))
        n = self.n_states
        if self.trans.shape != (n, n):
            raise ValueError(f"transition matrix shape {self.trans.shape} != ({n}, {n})")
        if self.means.shape != self.diag_covs.shape:
            raise ValueError("means and diag_covs must have the same shape")
        if not np.allclose(self.prior.sum(), 1.0, atol=1e-9):
            raise ValueError("prior must sum to 1")
        if np.any(self.trans < 0) or not np.allclose(self.trans.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("transition rows must be non-negative and sum to 1")
        if np.any(self.diag_covs <= 0):
            raise ValueError("covariance diagonal must be positive")

    @property
    def n_states(self):
        return self.prior.shape[0]

    @property
    def n_dims(self):
        return self.means.shape[1]

    def log_space(self):
        with np.errstate(divide="ignore"):
            return np.log(self.prior), np.log(self.trans)

    def to_dict(self):
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "prior": self.prior.tolist(),
            "trans": self.trans.tolist(),
            "means": self.means.tolist(),
            "diag_covs": self.diag_covs.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        version = d.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version: {version!r}")
        return cls(
            prior=np.array(d["prior"]),
            trans=np.array(d["trans"]),
            means=np.array(d["means"]),
            diag_covs=np.array(d["diag_covs"]),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 20
    loglik_tolerance: float = 1e-4
    init_iterations: int = 3
    var_floor: float = VAR_FLOOR
    var_ceil: float = VAR_CEIL
    seed: int = 0
    n_representatives: int = 5

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.var_floor < self.var_ceil:
            raise ValueError("var_floor must be below var_ceil")


def _as_matrix(seq):
    x = np.asarray(getattr(seq, "vectors", seq), dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _check_dims(model, x):
    if x.shape[1] != model.n_dims:
        raise ValueError(f"observation dimension {x.shape[1]} != model dimension {model.n_dims}")


def log_likelihood(model, seq):
    """log P(O | lambda) via the forward algorithm in log space."""
    x = _as_matrix(seq)
    _check_dims(model, x)
    log_pi, log_trans = model.log_space()
    log_obs = _backend.gaussian_log_obs(x, model.means, model.diag_covs)
    _, loglik = _backend.forward(log_pi, log_trans, log_obs)
    return float(loglik)


def viterbi(model, seq):
    """Most likely hidden state path and its log-probability."""
    x = _as_matrix(seq)
    _check_dims(model, x)
    log_pi, log_trans = model.log_space()
    log_obs = _backend.gaussian_log_obs(x, model.means, model.diag_covs)
    path, score = _backend.viterbi(log_pi, log_trans, log_obs)
    return np.asarray(path), float(score)


def ergodic_transitions(n_states, off_diagonal=OFF_DIAGONAL_INIT):
    """Ergodic init: fixed off-diagonal mass, self-transition absorbs the rest."""
    if n_states == 1:
        return np.ones((1, 1))
    a = np.full((n_states, n_states), off_diagonal)
    np.fill_diagonal(a, 1.0 - off_diagonal * (n_states - 1))
    return a


def _clamp_covs(covs, config):
    return np.clip(covs, config.var_floor, config.var_ceil)


def init_from_segments(sequences, n_states, config=None):
    """Segment-based initialization from representative sequences.

    The ``config.n_representatives`` longest sequences (ties broken by input
    order) are each split into ``n_states`` equal contiguous parts; state
    moments pool the parts across the representatives.
    """
    config = config or TrainConfig()
    mats = [_as_matrix(s) for s in sequences]
    usable = [m for m in mats if m.shape[0] >= n_states]
    if not usable:
        raise ValueError(f"initialization needs at least one sequence of length >= {n_states}")
    order = sorted(range(len(usable)), key=lambda i: -usable[i].shape[0])
    reps = [usable[i] for i in order[: config.n_representatives]]

    parts = [[] for _ in range(n_states)]
    for m in reps:
        for j, chunk in enumerate(np.array_split(m, n_states, axis=0)):
            parts[j].append(chunk)
    means = np.stack([np.concatenate(p).mean(axis=0) for p in parts])
    covs = np.stack([np.concatenate(p).var(axis=0) for p in parts])
    covs = _clamp_covs(covs, config)

    prior = np.full(n_states, 1.0 / n_states)
    trans = ergodic_transitions(n_states)
    model = GaussianHmm(prior=prior, trans=trans, means=means, diag_covs=covs)
    if config.init_iterations > 0:
        smooth_cfg = replace(config, max_iterations=config.init_iterations)
        model, _ = baum_welch(model, reps, smooth_cfg)
    return model


def _e_step(model, mats):
    """Accumulated expected sufficient statistics over all sequences."""
    n, d = model.n_states, model.n_dims
    log_pi, log_trans = model.log_space()
    prior_acc = np.zeros(n)
    trans_acc = np.zeros((n, n))
    gamma_sum = np.zeros(n)
    mean_acc = np.zeros((n, d))
    sq_acc = np.zeros((n, d))
    total_loglik = 0.0
    for x in mats:
        log_obs = _backend.gaussian_log_obs(x, model.means, model.diag_covs)
        log_alpha, loglik = _backend.forward(log_pi, log_trans, log_obs)
        log_beta = _backend.backward(log_trans, log_obs)
        total_loglik += loglik
        gamma = np.exp(log_alpha + log_beta - loglik)  # (T, N)
        prior_acc += gamma[0]
        gamma_sum += gamma.sum(axis=0)
        mean_acc += gamma.T @ x
        sq_acc += gamma.T @ (x * x)
        if x.shape[0] > 1:
            # xi summed over t: alpha[t] + A + b[t+1] + beta[t+1] - loglik
            log_xi = (
                log_alpha[:-1, :, None]
                + log_trans[None, :, :]
                + (log_obs[1:] + log_beta[1:])[:, None, :]
                - loglik
            )
            trans_acc += np.exp(log_xi).sum(axis=0)
    return total_loglik, prior_acc, trans_acc, gamma_sum, mean_acc, sq_acc


def baum_welch(model, sequences, config=None):
    """EM re-estimation over multiple sequences.

    Returns (model, trace) where trace lists the total log-likelihood under
    the parameters at the start of each iteration.
    """
    config = config or TrainConfig()
    mats = [_as_matrix(s) for s in sequences]
    if not mats:
        raise ValueError("baum_welch needs a nonempty training set")
    for x in mats:
        _check_dims(model, x)
    rng = np.random.default_rng(config.seed)
    all_vectors = np.concatenate(mats, axis=0)

    trace = []
    prev = None
    for _ in range(config.max_iterations):
        loglik, prior_acc, trans_acc, gamma_sum, mean_acc, sq_acc = _e_step(model, mats)
        trace.append(loglik)
        if prev is not None and loglik - prev < config.loglik_tolerance:
            break
        prev = loglik

        n, d = model.n_states, model.n_dims
        collapsed = gamma_sum <= 1e-12
        prior = prior_acc / prior_acc.sum()
        trans = model.trans.copy()
        row_mass = trans_acc.sum(axis=1)
        ok_rows = row_mass > 1e-12
        trans[ok_rows] = trans_acc[ok_rows] / row_mass[ok_rows, None]
        means = model.means.copy()
        covs = model.diag_covs.copy()
        safe = ~collapsed
        means[safe] = mean_acc[safe] / gamma_sum[safe, None]
        covs[safe] = sq_acc[safe] / gamma_sum[safe, None] - means[safe] ** 2
        for j in np.nonzero(collapsed)[0]:
            # zero total responsibility: restart the state on a random vector
            means[j] = all_vectors[rng.integers(all_vectors.shape[0])]
            covs[j] = 1.0
            logger.warning("state %d received zero responsibility; reinitialized", j)
        covs = _clamp_covs(covs, config)
        model = GaussianHmm(prior=prior, trans=trans, means=means, diag_covs=covs)
    return model, trace


def fit(sequences, n_states, config=None):
    """Initialize from segments, then train with Baum-Welch."""
    config = config or TrainConfig()
    model = init_from_segments(sequences, n_states, config)
    return baum_welch(model, sequences, config)
