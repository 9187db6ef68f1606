# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled log-space HMM recursions (forward, backward, Viterbi).

Mirrors the signatures of ``_pykernels``; the backend module picks whichever
imports cleanly.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

from ._pykernels import gaussian_log_obs  # numpy-vectorized, not a hot loop


cdef inline double _lse_row(double[::1] buf, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double m = -INFINITY
    cdef double s = 0.0
    for i in range(n):
        if buf[i] > m:
            m = buf[i]
    if m == -INFINITY:
        return -INFINITY
    for i in range(n):
        s += exp(buf[i] - m)
    return m + log(s)


def forward(double[::1] log_pi, double[:, ::1] log_trans, double[:, ::1] log_obs):
    cdef Py_ssize_t T = log_obs.shape[0]
    cdef Py_ssize_t N = log_obs.shape[1]
    cdef cnp.ndarray[double, ndim=2] alpha_arr = np.empty((T, N))
    cdef double[:, ::1] alpha = alpha_arr
    cdef cnp.ndarray[double, ndim=1] buf_arr = np.empty(N)
    cdef double[::1] buf = buf_arr
    cdef Py_ssize_t t, i, j
    for j in range(N):
        alpha[0, j] = log_pi[j] + log_obs[0, j]
    for t in range(1, T):
        for j in range(N):
            for i in range(N):
                buf[i] = alpha[t - 1, i] + log_trans[i, j]
            alpha[t, j] = _lse_row(buf, N) + log_obs[t, j]
    for j in range(N):
        buf[j] = alpha[T - 1, j]
    return alpha_arr, _lse_row(buf, N)


def backward(double[:, ::1] log_trans, double[:, ::1] log_obs):
    cdef Py_ssize_t T = log_obs.shape[0]
    cdef Py_ssize_t N = log_obs.shape[1]
    cdef cnp.ndarray[double, ndim=2] beta_arr = np.zeros((T, N))
    cdef double[:, ::1] beta = beta_arr
    cdef cnp.ndarray[double, ndim=1] buf_arr = np.empty(N)
    cdef double[::1] buf = buf_arr
    cdef Py_ssize_t t, i, j
    for t in range(T - 2, -1, -1):
        for i in range(N):
            for j in range(N):
                buf[j] = log_trans[i, j] + log_obs[t + 1, j] + beta[t + 1, j]
            beta[t, i] = _lse_row(buf, N)
    return beta_arr


def viterbi(double[::1] log_pi, double[:, ::1] log_trans, double[:, ::1] log_obs):
    cdef Py_ssize_t T = log_obs.shape[0]
    cdef Py_ssize_t N = log_obs.shape[1]
    cdef cnp.ndarray[double, ndim=1] delta_arr = np.empty(N)
    cdef cnp.ndarray[double, ndim=1] prev_arr = np.empty(N)
    cdef double[::1] delta = delta_arr
    cdef double[::1] prev = prev_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=2] psi_arr = np.zeros((T, N), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] psi = psi_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] path_arr = np.empty(T, dtype=np.int64)
    cdef cnp.int64_t[::1] path = path_arr
    cdef Py_ssize_t t, i, j, best
    cdef double score, best_score
    for j in range(N):
        delta[j] = log_pi[j] + log_obs[0, j]
    for t in range(1, T):
        for j in range(N):
            prev[j] = delta[j]
        for j in range(N):
            best = 0
            best_score = prev[0] + log_trans[0, j]
            for i in range(1, N):
                score = prev[i] + log_trans[i, j]
                if score > best_score:  # strict: ties keep the lower index
                    best_score = score
                    best = i
            psi[t, j] = best
            delta[j] = best_score + log_obs[t, j]
    best = 0
    best_score = delta[0]
    for j in range(1, N):
        if delta[j] > best_score:
            best_score = delta[j]
            best = j
    path[T - 1] = best
    for t in range(T - 2, -1, -1):
        path[t] = psi[t + 1, path[t + 1]]
    return path_arr, best_score
