# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Mirrors ``_kernels_py`` exactly (same algorithms,
same tie-breaking)."""

import numpy as np

from libc.math cimport INFINITY, sqrt


cdef int _chol_solve_fitted(double[:, ::1] g, double[::1] r, double[::1] z, int m) noexcept nogil:
    # in-place Cholesky of g (lower), forward-solve L z = r, return 0 on failure
    cdef int i, j, k
    cdef double s
    for j in range(m):
        s = g[j, j]
        for k in range(j):
            s -= g[j, k] * g[j, k]
        if s <= 0.0:
            return 0
        g[j, j] = sqrt(s)
        for i in range(j + 1, m):
            s = g[i, j]
            for k in range(j):
                s -= g[i, k] * g[j, k]
            g[i, j] = s / g[j, j]
    for i in range(m):
        s = r[i]
        for k in range(i):
            s -= g[i, k] * z[k]
        z[i] = s / g[i, i]
    return 1


def segment_rss_table(t, x, int p, int min_len):
    cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = tv.shape[0]
    cdef int m = p + 1
    cdef int nmom = 2 * p + 1
    out_arr = np.full((n + 1, n + 1), np.inf)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] s = np.zeros(nmom)
    cdef double[::1] sx = np.zeros(m)
    cdef double[:, ::1] g = np.zeros((m, m))
    cdef double[::1] z = np.zeros(m)
    cdef double[::1] r = np.zeros(m)
    cdef Py_ssize_t a, b, i
    cdef int j, k
    cdef double u, y, pw, sxx, fitted, rss
    fallback = []
    for a in range(n - min_len + 1):
        for j in range(nmom):
            s[j] = 0.0
        for j in range(m):
            sx[j] = 0.0
        sxx = 0.0
        for b in range(a + 1, n + 1):
            i = b - 1
            u = tv[i] - tv[a]
            y = xv[i] - xv[a]
            pw = 1.0
            for j in range(nmom):
                s[j] += pw
                if j < m:
                    sx[j] += pw * y
                pw *= u
            sxx += y * y
            if b - a < min_len:
                continue
            for j in range(m):
                r[j] = sx[j]
                for k in range(m):
                    g[j, k] = s[j + k]
            if _chol_solve_fitted(g, r, z, m):
                fitted = 0.0
                for j in range(m):
                    fitted += z[j] * z[j]
                rss = sxx - fitted
                out[a, b] = rss if rss > 0.0 else 0.0
            else:
                fallback.append((a, b, sxx))
    if fallback:
        hankel = np.add.outer(np.arange(m), np.arange(m))
        for a, b, sxx_f in fallback:
            uu = np.asarray(tv[a:b]) - tv[a]
            yy = np.asarray(xv[a:b]) - xv[a]
            pw_arr = np.vander(uu, nmom, increasing=True)
            gram = pw_arr.sum(axis=0)[hankel]
            rhs = (pw_arr[:, :m] * yy[:, None]).sum(axis=0)
            coef = np.linalg.lstsq(gram, rhs, rcond=None)[0]
            out[a, b] = max(sxx_f - float(coef @ rhs), 0.0)
    return out_arr


def dp_sweep(cost, int K):
    cdef const double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0] - 1
    best_arr = np.full((K, n + 1), np.inf)
    back_arr = np.zeros((K, n + 1), dtype=np.int64)
    cdef double[:, ::1] best = best_arr
    cdef long long[:, ::1] back = back_arr
    cdef Py_ssize_t k, a, b, arg
    cdef double v, bv
    for b in range(n + 1):
        best[0, b] = c[0, b]
    for k in range(1, K):
        for b in range(k + 1, n + 1):
            bv = INFINITY
            arg = 0
            for a in range(b):
                v = best[k - 1, a] + c[a, b]
                if v < bv:
                    bv = v
                    arg = a
            best[k, b] = bv
            back[k, b] = arg
    return best_arr, back_arr


def forward_backward(emission, pi, A):
    cdef const double[:, ::1] e = np.ascontiguousarray(emission, dtype=np.float64)
    cdef const double[::1] p0 = np.ascontiguousarray(pi, dtype=np.float64)
    cdef const double[:, ::1] tr = np.ascontiguousarray(A, dtype=np.float64)
    cdef Py_ssize_t n = e.shape[0]
    cdef Py_ssize_t K = e.shape[1]
    alpha_arr = np.empty((n, K))
    beta_arr = np.empty((n, K))
    c_arr = np.empty(n)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[::1] c = c_arr
    cdef Py_ssize_t i, k, l
    cdef double acc, tot
    tot = 0.0
    for k in range(K):
        alpha[0, k] = p0[k] * e[0, k]
        tot += alpha[0, k]
    if not tot > 0.0:
        raise FloatingPointError("zero likelihood at step 0")
    c[0] = tot
    for k in range(K):
        alpha[0, k] /= tot
    for i in range(1, n):
        tot = 0.0
        for k in range(K):
            acc = 0.0
            for l in range(K):
                acc += alpha[i - 1, l] * tr[l, k]
            alpha[i, k] = acc * e[i, k]
            tot += alpha[i, k]
        if not tot > 0.0:
            raise FloatingPointError(f"zero likelihood at step {i}")
        c[i] = tot
        for k in range(K):
            alpha[i, k] /= tot
    for k in range(K):
        beta[n - 1, k] = 1.0
    for i in range(n - 2, -1, -1):
        for l in range(K):
            acc = 0.0
            for k in range(K):
                acc += tr[l, k] * e[i + 1, k] * beta[i + 1, k]
            beta[i, l] = acc / c[i + 1]
    return alpha_arr, beta_arr, c_arr
