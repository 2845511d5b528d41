"""Quasi-definite KKT systems for the interior-point method.

The matrix

    [ 0   A^T  G^T  ]
    [ A   0    0    ]
    [ G   0   -W^2  ]

is regularized to ``diag(+d, -d, -d)`` on its diagonal blocks, permuted once
by a minimum-degree ordering, and factored as L D L^T with the kernels in
:mod:`drcc_opf.kernels`. Solves are polished by iterative refinement against
the unregularized matrix. Near the end of an infeasible or degenerate run the
matrix can become too ill-conditioned for an unpivoted factorization; solves
that miss the accuracy target then fall back to a pivoted sparse LU.
"""

import heapq

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from . import kernels


class FactorizationError(RuntimeError):
    pass


def minimum_degree(n, rows, cols):
    """Greedy minimum-degree ordering of a symmetric sparsity pattern.

    Works on the explicit elimination graph; ties break on the lower index so
    the ordering is deterministic.
    """
    adj = [set() for _ in range(n)]
    for r, c in zip(rows.tolist(), cols.tolist()):
        if r != c:
            adj[r].add(c)
            adj[c].add(r)
    heap = [(len(a), i) for i, a in enumerate(adj)]
    heapq.heapify(heap)
    done = np.zeros(n, dtype=bool)
    order = []
    while heap:
        deg, v = heapq.heappop(heap)
        if done[v] or deg != len(adj[v]):
            continue
        done[v] = True
        order.append(v)
        nbrs = adj[v]
        for u in nbrs:
            adj[u].discard(v)
        nl = list(nbrs)
        for i, u in enumerate(nl):
            au = adj[u]
            au.update(nl[:i])
            au.update(nl[i + 1 :])
            heapq.heappush(heap, (len(au), u))
        adj[v] = set()
    return np.asarray(order, dtype=np.int64)


class KKTSystem:
    """Fixed-pattern KKT matrix with a reusable ordering and symbolic analysis."""

    def __init__(self, A, G, space, static_reg=1e-9, backend=None):
        self.A = sp.csr_matrix(A)
        self.G = sp.csr_matrix(G)
        self.At = self.A.T.tocsr()
        self.Gt = self.G.T.tocsr()
        self.space = space
        self.static_reg = static_reg
        self.kern = kernels if backend is None else kernels.get_backend(backend)
        n = self.A.shape[1]
        p = self.A.shape[0]
        m = self.G.shape[0]
        self.n, self.p, self.m = n, p, m
        N = n + p + m
        self.N = N

        rows, cols, vals = [], [], []
        # diagonal of all three blocks (values filled at factor time)
        rows.append(np.arange(N))
        cols.append(np.arange(N))
        vals.append(np.zeros(N))
        Ac = self.A.tocoo()
        rows.append(Ac.col)
        cols.append(n + Ac.row)
        vals.append(Ac.data)
        Gc = self.G.tocoo()
        rows.append(Gc.col)
        cols.append(n + p + Gc.row)
        vals.append(Gc.data)
        # strict upper triangles of the dense SOC blocks
        self._soc_slots = {}
        offset = sum(len(r) for r in rows)
        for dim, idx in space.groups.items():
            iu, ju = np.triu_indices(dim, k=1)
            r = (n + p + idx[:, iu]).ravel()
            c = (n + p + idx[:, ju]).ravel()
            rows.append(r)
            cols.append(c)
            vals.append(np.zeros(len(r)))
            self._soc_slots[dim] = (np.arange(offset, offset + len(r)), iu, ju)
            offset += len(r)
        rows = np.concatenate(rows).astype(np.int64)
        cols = np.concatenate(cols).astype(np.int64)
        self._rows, self._cols = rows, cols
        self._base_vals = np.concatenate(vals).astype(np.float64)

        self.perm = minimum_degree(N, rows, cols)
        self.pinv = np.empty(N, dtype=np.int64)
        self.pinv[self.perm] = np.arange(N)
        pr = self.pinv[rows]
        pc = self.pinv[cols]
        lo = np.minimum(pr, pc)
        hi = np.maximum(pr, pc)
        self._order = np.lexsort((lo, hi))
        self.Ai = np.ascontiguousarray(lo[self._order])
        counts = np.bincount(hi, minlength=N)
        self.Ap = np.zeros(N + 1, dtype=np.int64)
        np.cumsum(counts, out=self.Ap[1:])
        self.etree, self.lnz = self.kern.etree(N, self.Ap, self.Ai)
        signs = np.concatenate([np.ones(n), -np.ones(p + m)])
        self.signs = np.ascontiguousarray(signs[self.perm])
        self.factor_nnz = int(self.lnz.sum())
        self._w2 = None

    def _values(self, w2_diag, w2_blocks, reg):
        n, p = self.n, self.p
        vals = self._base_vals.copy()
        diag = np.empty(self.N)
        diag[:n] = reg
        diag[n : n + p] = -reg
        zdiag = np.empty(self.m)
        zdiag[: self.space.nonneg] = -w2_diag
        for dim, idx in self.space.groups.items():
            B = w2_blocks[dim]
            zdiag[idx] = -np.diagonal(B, axis1=1, axis2=2)
            slots, iu, ju = self._soc_slots[dim]
            vals[slots] = -B[:, iu, ju].ravel()
        diag[n + p :] = zdiag - reg
        vals[: self.N] = diag
        return vals

    def factor(self, scaling):
        w2_diag, w2_blocks = scaling.w2_blocks()
        self._w2 = (w2_diag, w2_blocks)
        self._lu = None
        self._factor_at(self.static_reg)

    def _factor_at(self, reg):
        w2_diag, w2_blocks = self._w2
        for _ in range(4):
            vals = self._values(w2_diag, w2_blocks, reg)
            Ax = np.ascontiguousarray(vals[self._order])
            Lp, Li, Lx, D, bumped = self.kern.ldl_factor(
                self.N, self.Ap, self.Ai, Ax, self.etree, self.lnz, self.signs, 1e-13, max(reg, 1e-8)
            )
            if np.all(np.isfinite(Lx)) and np.all(np.isfinite(D)):
                self._L = (Lp, Li, Lx, D)
                self.bumped = bumped
                self.reg = reg
                return
            reg *= 100.0
        raise FactorizationError("KKT factorization broke down after regularization retries")

    def _matvec(self, v):
        n, p = self.n, self.p
        x = v[:n]
        y = v[n : n + p]
        z = v[n + p :]
        w2_diag, w2_blocks = self._w2
        out = np.empty_like(v)
        out[:n] = self.At @ y + self.Gt @ z
        out[n : n + p] = self.A @ x
        w2z = np.empty(self.m)
        l = self.space.nonneg
        w2z[:l] = w2_diag * z[:l]
        for dim, idx in self.space.groups.items():
            w2z[idx] = np.einsum("kij,kj->ki", w2_blocks[dim], z[idx])
        out[n + p :] = self.G @ x - w2z
        return out

    def _refined(self, rhs, refine, tol):
        Lp, Li, Lx, D = self._L
        perm = self.perm
        sol = np.empty(self.N)
        sol[perm] = self.kern.ldl_solve(Lp, Li, Lx, D, np.ascontiguousarray(rhs[perm]))
        if not np.all(np.isfinite(sol)):
            return sol, np.inf
        res = rhs - self._matvec(sol)
        err = np.abs(res).max()
        for _ in range(refine):
            if err <= tol:
                break
            delta = np.empty(self.N)
            delta[perm] = self.kern.ldl_solve(Lp, Li, Lx, D, np.ascontiguousarray(res[perm]))
            trial = sol + delta
            tres = rhs - self._matvec(trial)
            terr = np.abs(tres).max()
            # refinement against the unregularized matrix can stall or diverge
            if not terr < err:
                break
            sol, res, err = trial, tres, terr
        return sol, err

    def _pivoted(self, rhs, refine):
        """Solve with a partially pivoted LU of the unregularized matrix."""
        if self._lu is None:
            vals = self._values(*self._w2, 0.0)
            K = sp.coo_matrix((vals, (self._rows, self._cols)), shape=(self.N, self.N)).tocsr()
            K = (K + sp.triu(K, k=1).T).tocsc()
            try:
                self._lu = sla.splu(K)
            except RuntimeError:  # exactly singular
                self._lu = False
        if self._lu is False:
            return None, np.inf
        sol = self._lu.solve(rhs)
        res = rhs - self._matvec(sol)
        err = np.abs(res).max()
        for _ in range(refine):
            trial = sol + self._lu.solve(res)
            tres = rhs - self._matvec(trial)
            terr = np.abs(tres).max()
            if not terr < err:
                break
            sol, res, err = trial, tres, terr
        return sol, err

    def solve(self, rhs, refine=10, tol=1e-14, accept=1e-7):
        """Solve K v = rhs; a poor solve falls back to pivoting, then to more regularization."""
        scale = 1.0 + np.abs(rhs).max()
        sol, err = self._refined(rhs, refine, tol * scale)
        if err > accept * scale:
            trial, terr = self._pivoted(rhs, 3)
            if terr < err:
                sol, err = trial, terr
        reg = self.reg
        while err > accept * scale and reg < 1e-4:
            reg *= 100.0
            self._factor_at(reg)
            trial, terr = self._refined(rhs, 3 * refine, tol * scale)
            if terr < err:
                sol, err = trial, terr
        if not np.isfinite(err):
            raise FactorizationError("non-finite KKT solve")
        self.last_error = err / scale
        return sol
