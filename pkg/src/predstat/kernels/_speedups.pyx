# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel backend.

Same contracts as ``predstat.kernels._numpy`` but with fused loops: no
temporaries the size of the score matrix, single pass per row for the
max/exp/sum triple. Results agree with the NumPy backend to float64
rounding (accumulation order differs), not bitwise.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def logsumexp(x):
    cdef double[::1] v = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t i, n = v.shape[0]
    cdef double m = v[0]
    cdef double s = 0.0
    for i in range(1, n):
        if v[i] > m:
            m = v[i]
    for i in range(n):
        s += exp(v[i] - m)
    return m + log(s)


cdef void _column_lognorms(double[:, ::1] F, double tau, double[::1] out) noexcept:
    # Binary columns compute the partition from their count of ones so that
    # equal-count columns tie exactly (summation order cannot perturb the
    # index-based tie-break); other columns use plain max-subtracted sums.
    cdef Py_ssize_t n = F.shape[0], k = F.shape[1], i, j
    cdef double m, s, v, count
    cdef bint binary
    for j in range(k):
        binary = True
        count = 0.0
        for i in range(n):
            v = F[i, j]
            if v == 1.0:
                count += 1.0
            elif v != 0.0:
                binary = False
                break
        if binary:
            if count == 0.0:
                out[j] = log(<double> n)
            elif count == <double> n:
                out[j] = tau + log(<double> n)
            else:
                m = tau if tau > 0.0 else 0.0
                out[j] = m + log(count * exp(tau - m) + (n - count) * exp(-m))
            continue
        m = tau * F[0, j]
        for i in range(1, n):
            v = tau * F[i, j]
            if v > m:
                m = v
        s = 0.0
        for i in range(n):
            s += exp(tau * F[i, j] - m)
        out[j] = m + log(s)


def cluster_assign(F, double tau, double log_n):
    cdef double[:, ::1] Fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef Py_ssize_t n = Fv.shape[0], k = Fv.shape[1], i, j
    lognorms_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] lognorms = lognorms_arr
    _column_lognorms(Fv, tau, lognorms)
    assign_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] assign = assign_arr
    cdef double best, sc, loss = 0.0
    cdef Py_ssize_t best_j
    for i in range(n):
        best = tau * Fv[i, 0] - lognorms[0]
        best_j = 0
        for j in range(1, k):
            sc = tau * Fv[i, j] - lognorms[j]
            if sc > best:
                best = sc
                best_j = j
        if -log_n > best:  # background sits last, so it loses ties
            best = -log_n
            best_j = k
        assign[i] = best_j
        loss -= best
    return assign_arr, loss


def cluster_objective(F, double tau, assign, double log_n, bint need_fgrad):
    cdef double[:, ::1] Fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef long long[::1] av = np.ascontiguousarray(assign, dtype=np.int64)
    cdef Py_ssize_t n = Fv.shape[0], k = Fv.shape[1], i, j, a
    lognorms_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] lognorms = lognorms_arr
    _column_lognorms(Fv, tau, lognorms)
    counts_arr = np.zeros(k, dtype=np.float64)
    cdef double[::1] counts = counts_arr
    cdef double loss = 0.0
    for i in range(n):
        a = av[i]
        if a == k:
            loss += log_n
        else:
            loss += lognorms[a] - tau * Fv[i, a]
            counts[a] += 1.0
    if not need_fgrad:
        return loss, None
    G_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] G = G_arr
    for i in range(n):
        for j in range(k):
            # column softmax: exp(tau*F[i,j] - lognorm[j])
            G[i, j] = tau * counts[j] * exp(tau * Fv[i, j] - lognorms[j])
        a = av[i]
        if a != k:
            G[i, a] -= tau
    return loss, G_arr


def ts_objective(F, W, double lam, bint need_wgrad, bint need_fgrad):
    cdef double[:, ::1] Fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t T = Wv.shape[0], n = Fv.shape[0], k = Fv.shape[1], t, i, j
    cdef double m, s, v, p, own, loss = 0.0
    row_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] row = row_arr
    cdef double[:, ::1] Gw = None
    cdef double[:, ::1] Gf = None
    Gw_arr = Gf_arr = None
    if need_wgrad:
        Gw_arr = np.zeros((T, k), dtype=np.float64)
        Gw = Gw_arr
    if need_fgrad:
        Gf_arr = np.zeros((n, k), dtype=np.float64)
        Gf = Gf_arr
    for t in range(T):
        m = -1e308
        for i in range(n):
            v = 0.0
            for j in range(k):
                v += Wv[t, j] * Fv[i, j]
            row[i] = v
            if v > m:
                m = v
        s = 0.0
        for i in range(n):
            s += exp(row[i] - m)
        own = row[t]
        loss += m + log(s) - own
        if need_wgrad or need_fgrad:
            for i in range(n):
                p = exp(row[i] - m) / s
                if need_wgrad:
                    for j in range(k):
                        Gw[t, j] += p * Fv[i, j]
                if need_fgrad:
                    for j in range(k):
                        Gf[i, j] += p * Wv[t, j]
            if need_wgrad:
                for j in range(k):
                    Gw[t, j] -= Fv[t, j]
            if need_fgrad:
                for j in range(k):
                    Gf[t, j] -= Wv[t, j]
    # smoothness penalty (lam/2) * sum_t ||W[t] - W[t+1]||^2
    cdef double d
    for t in range(T - 1):
        for j in range(k):
            d = Wv[t, j] - Wv[t + 1, j]
            loss += 0.5 * lam * d * d
            if need_wgrad:
                Gw[t, j] += lam * d
                Gw[t + 1, j] -= lam * d
    return loss, Gw_arr, Gf_arr


def clf_objective(F, W, labels, double l2, bint need_wgrad, bint need_fgrad):
    cdef double[:, ::1] Fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef long long[::1] yv = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = Fv.shape[0], k = Fv.shape[1], c = Wv.shape[0], i, j, q
    cdef double m, s, v, p, loss = 0.0
    row_arr = np.empty(c, dtype=np.float64)
    cdef double[::1] row = row_arr
    cdef double[:, ::1] Gw = None
    cdef double[:, ::1] Gf = None
    Gw_arr = Gf_arr = None
    if need_wgrad:
        Gw_arr = np.zeros((c, k), dtype=np.float64)
        Gw = Gw_arr
    if need_fgrad:
        Gf_arr = np.zeros((n, k), dtype=np.float64)
        Gf = Gf_arr
    for i in range(n):
        m = -1e308
        for q in range(c):
            v = 0.0
            for j in range(k):
                v += Wv[q, j] * Fv[i, j]
            row[q] = v
            if v > m:
                m = v
        s = 0.0
        for q in range(c):
            s += exp(row[q] - m)
        loss += m + log(s) - row[yv[i]]
        if need_wgrad or need_fgrad:
            for q in range(c):
                p = exp(row[q] - m) / s
                if q == yv[i]:
                    p -= 1.0
                if need_wgrad:
                    for j in range(k):
                        Gw[q, j] += p * Fv[i, j]
                if need_fgrad:
                    for j in range(k):
                        Gf[i, j] += p * Wv[q, j]
    for q in range(c):
        for j in range(k):
            loss += 0.5 * l2 * Wv[q, j] * Wv[q, j]
            if need_wgrad:
                Gw[q, j] += l2 * Wv[q, j]
    return loss, Gw_arr, Gf_arr
