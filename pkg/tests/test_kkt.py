import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from drcc_opf import _kernels_py, kernels
from drcc_opf.cones import ConeSpace, NTScaling
from drcc_opf.kkt import KKTSystem, minimum_degree

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


def interior(space, rng):
    v = rng.uniform(0.5, 2.0, space.dim)
    for idx in space.groups.values():
        V = rng.normal(size=idx.shape)
        V[:, 0] = np.linalg.norm(V[:, 1:], axis=1) + rng.uniform(0.5, 2.0, idx.shape[0])
        v[idx] = V
    return v


def dense_kkt(A, G, space, scaling):
    n, p, m = A.shape[1], A.shape[0], G.shape[0]
    w2_diag, blocks = scaling.w2_blocks()
    W2 = np.zeros((m, m))
    W2[: space.nonneg, : space.nonneg] = np.diag(w2_diag)
    for dim, idx in space.groups.items():
        for k in range(idx.shape[0]):
            W2[np.ix_(idx[k], idx[k])] = blocks[dim][k]
    K = np.zeros((n + p + m, n + p + m))
    K[:n, n:n + p] = A.T.toarray()
    K[:n, n + p:] = G.T.toarray()
    K[n:n + p, :n] = A.toarray()
    K[n + p:, :n] = G.toarray()
    K[n + p:, n + p:] = -W2
    return K


def test_minimum_degree_is_permutation():
    rng = np.random.default_rng(0)
    M = sp.random(40, 40, density=0.1, random_state=1)
    M = (M + M.T + sp.eye(40)).tocoo()
    order = minimum_degree(40, M.row, M.col)
    assert sorted(order.tolist()) == list(range(40))
    assert np.array_equal(order, minimum_degree(40, M.row, M.col))


def test_minimum_degree_star_eliminates_leaves_first():
    rows = np.array([0, 0, 0, 0])
    cols = np.array([1, 2, 3, 4])
    order = minimum_degree(5, rows, cols)
    assert order[-1] == 0 or order[-2] == 0


@pytest.mark.parametrize("backend", BACKENDS)
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_kkt_solve_matches_dense(backend, seed):
    rng = np.random.default_rng(seed)
    soc = [int(d) for d in rng.integers(2, 5, size=int(rng.integers(0, 3)))]
    space = ConeSpace(int(rng.integers(1, 6)), soc)
    m = space.dim
    n = m + int(rng.integers(0, 3))
    p = int(rng.integers(1, max(2, n // 2)))
    A = sp.csr_matrix(rng.normal(size=(p, n)) * (rng.random((p, n)) < 0.5) + np.eye(p, n))
    G = sp.csr_matrix(-np.eye(m, n))
    scaling = NTScaling.compute(space, interior(space, rng), interior(space, rng))
    kkt = KKTSystem(A, G, space, backend=backend)
    kkt.factor(scaling)
    K = dense_kkt(A, G, space, scaling)
    rhs = rng.normal(size=K.shape[0])
    if np.linalg.cond(K) > 1e10:
        return
    np.testing.assert_allclose(kkt.solve(rhs), np.linalg.solve(K, rhs), atol=1e-8, rtol=1e-8)


def test_pivoted_fallback_on_indefinite_block():
    """A rank-deficient equality block defeats the plain factorization; the solve still lands."""
    rng = np.random.default_rng(3)
    space = ConeSpace(4, [3])
    n = m = space.dim
    row = rng.normal(size=n)
    A = sp.csr_matrix(np.vstack([row, row, rng.normal(size=n)]))
    G = sp.csr_matrix(-np.eye(m))
    scaling = NTScaling.compute(space, interior(space, rng), interior(space, rng))
    kkt = KKTSystem(A, G, space, static_reg=1e-12)
    kkt.factor(scaling)
    K = dense_kkt(A, G, space, scaling)
    # consistent right-hand side (duplicate rows agree)
    sol = rng.normal(size=K.shape[0])
    rhs = K @ sol
    out = kkt.solve(rhs)
    assert np.abs(K @ out - rhs).max() <= 1e-7 * (1 + np.abs(rhs).max())


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")
def test_kernel_parity():
    from drcc_opf import _kernels

    rng = np.random.default_rng(8)
    N = 30
    M = sp.random(N, N, density=0.15, random_state=2)
    M = sp.triu(M + M.T + 5 * sp.eye(N)).tocsc()
    M.sort_indices()
    Ap = M.indptr.astype(np.int64)
    Ai = M.indices.astype(np.int64)
    Ax = M.data.astype(np.float64)
    p1, l1 = _kernels_py.etree(N, Ap, Ai)
    p2, l2 = _kernels.etree(N, Ap, Ai)
    assert np.array_equal(p1, p2) and np.array_equal(l1, l2)
    signs = np.ones(N)
    f1 = _kernels_py.ldl_factor(N, Ap, Ai, Ax, p1, l1, signs, 1e-13, 1e-8)
    f2 = _kernels.ldl_factor(N, Ap, Ai, Ax, p2, l2, signs, 1e-13, 1e-8)
    for a, b in zip(f1[:4], f2[:4]):
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=0)
    b = rng.normal(size=N)
    x1 = _kernels_py.ldl_solve(*f1[:4], b)
    x2 = _kernels.ldl_solve(*f2[:4], b)
    np.testing.assert_allclose(x1, x2, rtol=1e-13)
    full = (M + sp.triu(M, 1).T).toarray()
    np.testing.assert_allclose(full @ x1, b, atol=1e-10)

    parent = np.array([-1, 0, 1, 1, 0], dtype=np.int64)
    R = rng.uniform(0, 0.1, 5)
    X = rng.uniform(0, 0.1, 5)
    P = rng.normal(size=(3, 5))
    Q = rng.normal(size=(3, 5))
    for a, b in zip(_kernels_py.radial_sweep(parent, R, X, P, Q, 1.0), _kernels.radial_sweep(parent, R, X, P, Q, 1.0)):
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


def test_get_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_pure_python_selected_by_env(monkeypatch):
    import importlib

    monkeypatch.setenv("DRCC_OPF_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
        assert mod.ldl_factor is _kernels_py.ldl_factor
    finally:
        monkeypatch.delenv("DRCC_OPF_PURE_PYTHON")
        importlib.reload(kernels)
