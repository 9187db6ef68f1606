"""Pure-NumPy log-space HMM recursions.

Reference implementation of the hot kernels; the compiled Cython version in
``_ckernels`` mirrors these signatures exactly.  All recursions run in log
space so long sequences cannot underflow.
"""

import numpy as np

NEG_INF = -np.inf


def gaussian_log_obs(obs, means, diag_covs):
    """Per-frame log density under each state's diagonal Gaussian.

    obs: (T, D), means: (N, D), diag_covs: (N, D) -> (T, N)
    """
    obs = np.asarray(obs, dtype=np.float64)
    diff = obs[:, None, :] - means[None, :, :]
    quad = np.sum(diff * diff / diag_covs[None, :, :], axis=2)
    log_norm = np.sum(np.log(2.0 * np.pi * diag_covs), axis=1)
    return -0.5 * (quad + log_norm[None, :])


def _logsumexp(a, axis=None):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def forward(log_pi, log_trans, log_obs):
    """Forward recursion. Returns (log_alpha, log_likelihood)."""
    T, N = log_obs.shape
    log_alpha = np.empty((T, N))
    log_alpha[0] = log_pi + log_obs[0]
    for t in range(1, T):
        log_alpha[t] = _logsumexp(log_alpha[t - 1][:, None] + log_trans, axis=0)
        log_alpha[t] += log_obs[t]
    m = np.max(log_alpha[T - 1])
    if not np.isfinite(m):
        return log_alpha, NEG_INF
    loglik = m + np.log(np.sum(np.exp(log_alpha[T - 1] - m)))
    return log_alpha, loglik


def backward(log_trans, log_obs):
    """Backward recursion. Returns log_beta with log_beta[T-1] = 0."""
    T, N = log_obs.shape
    log_beta = np.zeros((T, N))
    for t in range(T - 2, -1, -1):
        log_beta[t] = _logsumexp(
            log_trans + (log_obs[t + 1] + log_beta[t + 1])[None, :], axis=1
        )
    return log_beta


def viterbi(log_pi, log_trans, log_obs):
    """Most likely state path; ties break toward the lower state index.

    Returns (path: int64 array of length T, path log-probability).
    """
    T, N = log_obs.shape
    delta = log_pi + log_obs[0]
    psi = np.zeros((T, N), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, None] + log_trans
        psi[t] = np.argmax(scores, axis=0)  # argmax takes the first maximum
        delta = scores[psi[t], np.arange(N)] + log_obs[t]
    last = int(np.argmax(delta))
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = last
    for t in range(T - 2, -1, -1):
        path[t] = psi[t + 1, path[t + 1]]
    return path, float(delta[last])
