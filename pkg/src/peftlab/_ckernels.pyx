# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the _pykernels recurrences (CTC forward-backward, DTW
accumulation). Same contracts, same operation order, C loop speed."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, log1p

COMPILED = True


cdef inline double _logaddexp(double a, double b) noexcept:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a < b:
        a, b = b, a
    return a + log1p(exp(b - a))


def ctc_forward_backward(cnp.float64_t[:, ::1] log_probs, cnp.int64_t[::1] targets, int blank):
    """Return (loss, d loss / d log_probs); see _pykernels for the recursion."""
    cdef Py_ssize_t T = log_probs.shape[0]
    cdef Py_ssize_t C = log_probs.shape[1]
    cdef Py_ssize_t L = targets.shape[0]
    cdef Py_ssize_t S = 2 * L + 1
    cdef Py_ssize_t t, s

    ext_arr = np.full(S, blank, dtype=np.int64)
    ext_arr[1::2] = np.asarray(targets)
    cdef cnp.int64_t[::1] ext = ext_arr

    skip_arr = np.zeros(S, dtype=np.uint8)
    for s in range(2, S):
        if ext[s] != blank and ext[s] != ext[s - 2]:
            skip_arr[s] = 1
    cdef cnp.uint8_t[::1] can_skip = skip_arr

    alpha_arr = np.full((T, S), -np.inf)
    beta_arr = np.full((T, S), -np.inf)
    cdef cnp.float64_t[:, ::1] alpha = alpha_arr
    cdef cnp.float64_t[:, ::1] beta = beta_arr
    cdef double acc, total

    alpha[0, 0] = log_probs[0, ext[0]]
    if S > 1:
        alpha[0, 1] = log_probs[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            acc = alpha[t - 1, s]
            if s >= 1:
                acc = _logaddexp(acc, alpha[t - 1, s - 1])
            if s >= 2 and can_skip[s]:
                acc = _logaddexp(acc, alpha[t - 1, s - 2])
            alpha[t, s] = acc + log_probs[t, ext[s]]

    total = alpha[T - 1, S - 1]
    if S > 1:
        total = _logaddexp(total, alpha[T - 1, S - 2])

    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        for s in range(S):
            acc = beta[t + 1, s] + log_probs[t + 1, ext[s]]
            if s + 1 < S:
                acc = _logaddexp(acc, beta[t + 1, s + 1] + log_probs[t + 1, ext[s + 1]])
            if s + 2 < S and can_skip[s + 2]:
                acc = _logaddexp(acc, beta[t + 1, s + 2] + log_probs[t + 1, ext[s + 2]])
            beta[t, s] = acc

    grad_arr = np.zeros((T, C))
    cdef cnp.float64_t[:, ::1] grad = grad_arr
    for t in range(T):
        for s in range(S):
            grad[t, ext[s]] -= exp(alpha[t, s] + beta[t, s] - total)

    return -total, grad_arr


def dtw_accumulate(cnp.float64_t[:, ::1] cost):
    """Accumulated-cost matrix; see _pykernels.dtw_accumulate."""
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t m = cost.shape[1]
    cdef Py_ssize_t i, j
    cdef double best

    acc_arr = np.empty((n, m))
    cdef cnp.float64_t[:, ::1] acc = acc_arr

    acc[0, 0] = cost[0, 0]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        for j in range(1, m):
            best = acc[i - 1, j - 1]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            acc[i, j] = cost[i, j] + best
    return acc_arr
