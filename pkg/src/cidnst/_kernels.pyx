# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: CTC forward-backward and Levenshtein alignment.

Both functions mirror ``cidnst._kernels_py`` exactly; ``cidnst.kernels``
picks whichever is importable.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, INFINITY

cnp.import_array()


cdef inline double _lse(double a, double b) noexcept nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def ctc_forward_backward(const double[:, ::1] logp, const long[::1] labels, long blank):
    """Negative log-likelihood of ``labels`` and its gradient w.r.t. ``logp``.

    ``logp`` is (L, K) per-frame log emission scores; the label sequence must
    be feasible (callers check).
    """
    cdef Py_ssize_t L = logp.shape[0]
    cdef Py_ssize_t K = logp.shape[1]
    cdef Py_ssize_t U = labels.shape[0]
    cdef Py_ssize_t S = 2 * U + 1
    cdef Py_ssize_t t, s, k
    cdef double a, loglik

    ext_arr = np.empty(S, dtype=np.int64)
    cdef long[::1] ext = ext_arr
    for s in range(S):
        ext[s] = blank if s % 2 == 0 else labels[(s - 1) // 2]

    alpha_arr = np.full((L, S), -np.inf)
    beta_arr = np.full((L, S), -np.inf)
    grad_arr = np.zeros((L, K))
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[:, ::1] grad = grad_arr

    acc_arr = np.empty(K)
    cdef double[::1] acc = acc_arr

    with nogil:
        alpha[0, 0] = logp[0, blank]
        if S > 1:
            alpha[0, 1] = logp[0, ext[1]]
        for t in range(1, L):
            for s in range(S):
                a = alpha[t - 1, s]
                if s >= 1:
                    a = _lse(a, alpha[t - 1, s - 1])
                if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                    a = _lse(a, alpha[t - 1, s - 2])
                if a != -INFINITY:
                    alpha[t, s] = a + logp[t, ext[s]]

        loglik = alpha[L - 1, S - 1]
        if S > 1:
            loglik = _lse(loglik, alpha[L - 1, S - 2])

        beta[L - 1, S - 1] = 0.0
        if S > 1:
            beta[L - 1, S - 2] = 0.0
        for t in range(L - 2, -1, -1):
            for s in range(S):
                a = beta[t + 1, s] + logp[t + 1, ext[s]]
                if s + 1 < S:
                    a = _lse(a, beta[t + 1, s + 1] + logp[t + 1, ext[s + 1]])
                if s + 2 < S and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                    a = _lse(a, beta[t + 1, s + 2] + logp[t + 1, ext[s + 2]])
                beta[t, s] = a

        for t in range(L):
            for k in range(K):
                acc[k] = -INFINITY
            for s in range(S):
                acc[ext[s]] = _lse(acc[ext[s]], alpha[t, s] + beta[t, s])
            for k in range(K):
                if acc[k] != -INFINITY:
                    grad[t, k] = -exp(acc[k] - loglik)

    return -loglik, grad_arr


def levenshtein_align(const long[::1] ref, const long[::1] hyp):
    """Unit-cost edit distance and backtraced script.

    Returns ``(distance, ops)`` where ops is an int8 array in forward order with
    codes 0=match, 1=sub, 2=ins, 3=del. Backtrace prefers sub, then ins, then del.
    """
    cdef Py_ssize_t n = ref.shape[0]
    cdef Py_ssize_t m = hyp.shape[0]
    cdef Py_ssize_t i, j, k
    cdef long c, best

    cost_arr = np.empty((n + 1, m + 1), dtype=np.int64)
    cdef long[:, ::1] cost = cost_arr
    ops_arr = np.empty(n + m, dtype=np.int8)
    cdef signed char[::1] ops = ops_arr

    with nogil:
        for i in range(n + 1):
            cost[i, 0] = i
        for j in range(m + 1):
            cost[0, j] = j
        for i in range(1, n + 1):
            for j in range(1, m + 1):
                best = cost[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
                c = cost[i, j - 1] + 1
                if c < best:
                    best = c
                c = cost[i - 1, j] + 1
                if c < best:
                    best = c
                cost[i, j] = best

        i = n
        j = m
        k = 0
        while i > 0 or j > 0:
            if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1):
                ops[k] = 0 if ref[i - 1] == hyp[j - 1] else 1
                i -= 1
                j -= 1
            elif j > 0 and cost[i, j] == cost[i, j - 1] + 1:
                ops[k] = 2
                j -= 1
            else:
                ops[k] = 3
                i -= 1
            k += 1

    return int(cost_arr[n, m]), ops_arr[:k][::-1].copy()
