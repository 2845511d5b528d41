"""Pure-Python reference versions of the compiled kernels.

Signatures and results match ``_kernels.pyx`` exactly; these are used when the
extension is not built or when ``DRCC_OPF_PURE_PYTHON=1`` is set.
"""

import numpy as np


def etree(n, Ap, Ai):
    """Elimination tree and per-column nonzero counts of L for an upper-triangular CSC matrix."""
    parent = [-1] * n
    lnz = [0] * n
    work = [0] * n
    Ap = Ap.tolist()
    Ai = Ai.tolist()
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
    return np.array(parent, dtype=np.int64), np.array(lnz, dtype=np.int64)


def ldl_factor(n, Ap, Ai, Ax, parent, lnz, signs, eps, delta):
    """Numeric LDL^T factorization with dynamic pivot regularization.

    Returns ``(Lp, Li, Lx, D, n_bumped)``. A pivot whose signed value falls
    below ``eps`` is replaced by ``signs[k] * delta``.
    """
    Ap = Ap.tolist()
    Ai = Ai.tolist()
    Ax = Ax.tolist()
    parent = parent.tolist()
    signs = signs.tolist()
    Lp = [0] * (n + 1)
    for i in range(n):
        Lp[i + 1] = Lp[i] + int(lnz[i])
    nnz = Lp[n]
    Li = [0] * nnz
    Lx = [0.0] * nnz
    D = [0.0] * n
    Dinv = [0.0] * n
    y_vals = [0.0] * n
    y_used = [False] * n
    y_idx = [0] * n
    buf = [0] * n
    next_space = Lp[:n]
    bumped = 0

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
                y_used[nxt] = True
                buf[0] = nxt
                n_e = 1
                nxt = parent[b]
                while nxt != -1 and nxt < k:
                    if y_used[nxt]:
                        break
                    y_used[nxt] = True
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
            y_used[c] = False
        if signs[k] * d < eps:
            d = signs[k] * delta
            bumped += 1
        D[k] = d
        Dinv[k] = 1.0 / d

    return (
        np.array(Lp, dtype=np.int64),
        np.array(Li, dtype=np.int64),
        np.array(Lx, dtype=np.float64),
        np.array(D, dtype=np.float64),
        bumped,
    )


def ldl_solve(Lp, Li, Lx, D, b):
    """Solve ``L D L^T x = b``."""
    n = len(D)
    x = np.array(b, dtype=np.float64).tolist()
    Lp = Lp.tolist()
    Li = Li.tolist()
    Lx = Lx.tolist()
    D = D.tolist()
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
    return np.array(x, dtype=np.float64)


def radial_sweep(parent, R, X, inj_p, inj_q, u0=1.0):
    """Batched LinDistFlow on a topologically ordered tree.

    ``parent[i] < i`` for every non-root bus; column 0 is the root. Flows are
    accumulated leaf-to-root, squared voltages propagated root-to-leaf.
    """
    inj_p = np.atleast_2d(np.asarray(inj_p, dtype=np.float64))
    inj_q = np.atleast_2d(np.asarray(inj_q, dtype=np.float64))
    n = len(parent)
    f_p = inj_p.copy()
    f_q = inj_q.copy()
    f_p[:, 0] = 0.0
    f_q[:, 0] = 0.0
    for i in range(n - 1, 0, -1):
        k = parent[i]
        if k > 0:
            f_p[:, k] += f_p[:, i]
            f_q[:, k] += f_q[:, i]
    u = np.empty_like(f_p)
    u[:, 0] = u0
    for i in range(1, n):
        u[:, i] = u[:, parent[i]] - 2.0 * (R[i] * f_p[:, i] + X[i] * f_q[:, i])
    return f_p, f_q, u
