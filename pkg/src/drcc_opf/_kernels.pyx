# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: sparse LDL^T (elimination-tree based) and the batched radial sweep."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t idx_t


def etree(Py_ssize_t n, const idx_t[::1] Ap, const idx_t[::1] Ai):
    cdef idx_t[::1] parent = np.full(n, -1, dtype=np.int64)
    cdef idx_t[::1] lnz = np.zeros(n, dtype=np.int64)
    cdef idx_t[::1] work = np.zeros(n, dtype=np.int64)
    cdef Py_ssize_t j, p, i
    cdef bint has_diag
    for j in range(n):
        work[j] = j
        has_diag = False
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            if i > j:
                raise ValueError("matrix is not upper triangular")
            if i == j:
                has_diag = True
            while work[i] != j:
                if parent[i] == -1:
                    parent[i] = j
                lnz[i] += 1
                work[i] = j
                i = parent[i]
        if not has_diag:
            raise ValueError(f"missing diagonal entry in column {j}")
    return np.asarray(parent), np.asarray(lnz)


def ldl_factor(Py_ssize_t n, const idx_t[::1] Ap, const idx_t[::1] Ai, const double[::1] Ax,
               const idx_t[::1] parent, const idx_t[::1] lnz, const double[::1] signs,
               double eps, double delta):
    cdef Py_ssize_t i, j, k, p, b, c, nxt, n_e, nnz_y, end
    cdef double d, yc, lx
    cdef int bumped = 0
    Lp_arr = np.zeros(n + 1, dtype=np.int64)
    cdef idx_t[::1] Lp = Lp_arr
    for i in range(n):
        Lp[i + 1] = Lp[i] + lnz[i]
    cdef Py_ssize_t nnz = Lp[n]
    Li_arr = np.zeros(nnz, dtype=np.int64)
    Lx_arr = np.zeros(nnz, dtype=np.float64)
    D_arr = np.zeros(n, dtype=np.float64)
    cdef idx_t[::1] Li = Li_arr
    cdef double[::1] Lx = Lx_arr
    cdef double[::1] D = D_arr
    cdef double[::1] Dinv = np.zeros(n, dtype=np.float64)
    cdef double[::1] y_vals = np.zeros(n, dtype=np.float64)
    cdef cnp.uint8_t[::1] y_used = np.zeros(n, dtype=np.uint8)
    cdef idx_t[::1] y_idx = np.zeros(n, dtype=np.int64)
    cdef idx_t[::1] buf = np.zeros(n, dtype=np.int64)
    cdef idx_t[::1] next_space = np.array(Lp_arr[:n])

    for k in range(n):
        nnz_y = 0
        d = 0.0
        for p in range(Ap[k], Ap[k + 1]):
            b = Ai[p]
            if b == k:
                d = Ax[p]
                continue
            y_vals[b] = Ax[p]
            nxt = b
            if not y_used[nxt]:
                y_used[nxt] = 1
                buf[0] = nxt
                n_e = 1
                nxt = parent[b]
                while nxt != -1 and nxt < k:
                    if y_used[nxt]:
                        break
                    y_used[nxt] = 1
                    buf[n_e] = nxt
                    n_e += 1
                    nxt = parent[nxt]
                while n_e:
                    n_e -= 1
                    y_idx[nnz_y] = buf[n_e]
                    nnz_y += 1
        for i in range(nnz_y - 1, -1, -1):
            c = y_idx[i]
            end = next_space[c]
            yc = y_vals[c]
            for j in range(Lp[c], end):
                y_vals[Li[j]] -= Lx[j] * yc
            Li[end] = k
            lx = yc * Dinv[c]
            Lx[end] = lx
            d -= yc * lx
            next_space[c] = end + 1
            y_vals[c] = 0.0
            y_used[c] = 0
        if signs[k] * d < eps:
            d = signs[k] * delta
            bumped += 1
        D[k] = d
        Dinv[k] = 1.0 / d
    return Lp_arr, Li_arr, Lx_arr, D_arr, bumped


def ldl_solve(const idx_t[::1] Lp, const idx_t[::1] Li, const double[::1] Lx, const double[::1] D, b):
    cdef Py_ssize_t n = D.shape[0]
    x_arr = np.array(b, dtype=np.float64)
    cdef double[::1] x = x_arr
    cdef Py_ssize_t i, j
    cdef double xi, acc
    for i in range(n):
        xi = x[i]
        if xi != 0.0:
            for j in range(Lp[i], Lp[i + 1]):
                x[Li[j]] -= Lx[j] * xi
    for i in range(n):
        x[i] /= D[i]
    for i in range(n - 1, -1, -1):
        acc = x[i]
        for j in range(Lp[i], Lp[i + 1]):
            acc -= Lx[j] * x[Li[j]]
        x[i] = acc
    return x_arr


def radial_sweep(parent, R, X, inj_p, inj_q, double u0=1.0):
    cdef const idx_t[::1] par = np.ascontiguousarray(parent, dtype=np.int64)
    cdef const double[::1] r = np.ascontiguousarray(R, dtype=np.float64)
    cdef const double[::1] xx = np.ascontiguousarray(X, dtype=np.float64)
    fp_arr = np.array(np.atleast_2d(inj_p), dtype=np.float64, order="C")
    fq_arr = np.array(np.atleast_2d(inj_q), dtype=np.float64, order="C")
    cdef double[:, ::1] fp = fp_arr
    cdef double[:, ::1] fq = fq_arr
    cdef Py_ssize_t S = fp.shape[0]
    cdef Py_ssize_t n = par.shape[0]
    u_arr = np.empty((S, n), dtype=np.float64)
    cdef double[:, ::1] u = u_arr
    cdef Py_ssize_t s, i, k
    for s in range(S):
        fp[s, 0] = 0.0
        fq[s, 0] = 0.0
        for i in range(n - 1, 0, -1):
            k = par[i]
            if k > 0:
                fp[s, k] += fp[s, i]
                fq[s, k] += fq[s, i]
        u[s, 0] = u0
        for i in range(1, n):
            u[s, i] = u[s, par[i]] - 2.0 * (r[i] * fp[s, i] + xx[i] * fq[s, i])
    return fp_arr, fq_arr, u_arr
