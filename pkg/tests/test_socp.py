import numpy as np
import pytest
import scipy.sparse as sp

from drcc_opf import io as cio
from drcc_opf.conic import ConicProblem, ProblemBuilder, Segment
from drcc_opf.formulation import Mode, RiskConfig, build
from drcc_opf.kernels import BACKEND
from drcc_opf.network import Generator, NetworkCase, validate_radial
from drcc_opf.socp import (
    DUAL_INFEASIBLE, OPTIMAL, PRIMAL_INFEASIBLE, MalformedProblem, SolverConfig, SolverResult, residuals, solve,
)
from drcc_opf.uncertainty import AmbiguityModel, ForecastErrorModel

from socp_problems import cone_gap, kkt_oracle, random_feasible, random_infeasible


def test_boundary_optimum():
    pb = ProblemBuilder()
    x = pb.nonneg("x", 1)
    pb.cost(x, 1.0)
    r = solve(pb.build())
    assert r.status == OPTIMAL
    assert abs(r.x[0]) < 1e-7


def test_euclidean_norm():
    pb = ProblemBuilder()
    t = pb.soc("t", 3)
    pb.eq([(t[1], 1.0)], 3.0)
    pb.eq([(t[2], 1.0)], 4.0)
    pb.cost(t[0], 1.0)
    r = solve(pb.build())
    assert r.status == OPTIMAL
    assert r.x[0] == pytest.approx(5.0, abs=1e-7)


def test_random_feasible_against_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(60):
        P = random_feasible(rng)
        r = solve(P)
        assert r.status == OPTIMAL
        pr, du, comp = kkt_oracle(P, r.x, r.y, r.s)
        assert max(pr, du, comp) <= 1e-6
        assert P.c @ r.x >= P.b @ r.y - 1e-6 * (1 + abs(P.c @ r.x))
        assert cone_gap(P, r.x) <= 1e-9


def test_random_infeasible_certified():
    rng = np.random.default_rng(77)
    for _ in range(40):
        P = random_infeasible(rng)
        r = solve(P)
        assert r.status == PRIMAL_INFEASIBLE
        # Farkas: A^T y + s = 0 with s in K*, and b^T y > 0
        assert P.b @ r.y > 0
        bty = P.b @ r.y
        assert np.abs(P.A.T @ r.y + r.s).max() <= 1e-6 * max(1.0, bty)
        assert cone_gap(P, r.s) <= 1e-5 * bty


def test_unbounded_is_dual_infeasible():
    pb = ProblemBuilder()
    x = pb.nonneg("x", 2)
    pb.eq([(x, np.array([1.0, -1.0]))], 0.0)
    pb.cost(x[0], -1.0)
    r = solve(pb.build())
    assert r.status == DUAL_INFEASIBLE


def test_infeasible_opf_instances(net15):
    """Chance-constrained cases with too little reactive headroom: certified, not stalled."""
    m = ForecastErrorModel.from_loads(net15.load_p, net15.load_q, 0.2)
    for q_max in (0.2,):
        gens = [g if g.bus == 0 else Generator(g.bus, g.p_min, g.p_max, q_max, g.c2, g.c1, g.c0, g.name)
                for g in net15.case.generators]
        net = validate_radial(NetworkCase(net15.case.buses, net15.case.lines, gens))
        for eta in (0.03, 0.05, 0.1, 0.2):
            P = build(net, Mode.CC, RiskConfig(Mode.CC, eta), var_p=m.var_p, var_q=m.var_q)
            assert solve(P).status == PRIMAL_INFEASIBLE


def test_residuals_report_gap_for_suboptimal_point():
    pb = ProblemBuilder()
    x = pb.nonneg("x", 2)
    pb.eq([(x, np.ones(2))], 1.0)
    pb.cost(x, np.array([1.0, 2.0]))
    P = pb.build()
    # feasible but suboptimal primal, optimal dual (y = 1, s = c - y)
    res = SolverResult(np.array([0.5, 0.5]), np.array([1.0]), np.array([0.0, 1.0]), OPTIMAL, 0, 0, 0, 0)
    pr, du, gap = residuals(P, res)
    assert pr == 0 and du == 0 and gap > 0


def test_residuals_track_primal_perturbation():
    pb = ProblemBuilder()
    x = pb.nonneg("x", 2)
    pb.eq([(x, np.ones(2))], 1.0)
    pb.cost(x, np.array([1.0, 2.0]))
    P = pb.build()
    r = solve(P)
    r.x = r.x + np.array([1e-3, 0.0])
    pr, _, _ = residuals(P, r)
    # scaled by 1 + |b|_inf = 2
    assert pr * 2.0 == pytest.approx(1e-3, rel=1e-3)


def test_deterministic_repeat():
    rng = np.random.default_rng(5)
    for _ in range(10):
        P = random_feasible(rng)
        a, b = solve(P), solve(P)
        assert a.iters == b.iters
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_objective_scaling_invariance():
    rng = np.random.default_rng(9)
    for _ in range(15):
        P = random_feasible(rng)
        Q = ConicProblem(1000.0 * P.c, P.A, P.b, P.segments)
        a, b = solve(P), solve(Q)
        assert a.status == b.status == OPTIMAL
        # argmin may be non-unique; compare objectives and feasibility instead when x differs
        if np.abs(a.x - b.x).max() > 1e-6:
            assert P.c @ b.x == pytest.approx(P.c @ a.x, abs=1e-6 * (1 + abs(P.c @ a.x)))
        else:
            np.testing.assert_allclose(a.x, b.x, atol=1e-6)


@pytest.mark.skipif(BACKEND != "cython", reason="compiled kernels not built")
def test_backends_agree():
    rng = np.random.default_rng(11)
    for _ in range(10):
        P = random_feasible(rng)
        a = solve(P, SolverConfig(backend="cython"))
        b = solve(P, SolverConfig(backend="python"))
        assert a.iters == b.iters
        np.testing.assert_allclose(a.x, b.x, atol=1e-9, rtol=1e-9)


def test_malformed_problems():
    with pytest.raises(ValueError):
        ConicProblem(np.zeros(2), sp.csr_matrix((1, 3)), np.zeros(1), (Segment("nonneg", 0, 2),))
    with pytest.raises(ValueError):
        ConicProblem(np.zeros(2), sp.csr_matrix((1, 2)), np.zeros(1), (Segment("soc", 0, 1), Segment("free", 1, 1)))
    P = ConicProblem(np.array([np.nan, 1.0]), sp.csr_matrix(np.ones((1, 2))), np.ones(1), (Segment("nonneg", 0, 2),))
    with pytest.raises(MalformedProblem):
        solve(P)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol_gap=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)


def test_dump_round_trip(net15):
    m = ForecastErrorModel.from_loads(net15.load_p, net15.load_q, 0.2)
    P = build(net15, Mode.CC, RiskConfig(Mode.CC, 0.05), var_p=m.var_p, var_q=m.var_q)
    Q = ConicProblem.from_dump(P.dump())
    assert Q.dump() == P.dump()
    assert solve(Q).objective == pytest.approx(solve(P).objective, rel=1e-12)


@pytest.mark.parametrize("seed", [2, 39])
def test_barely_infeasible_dr_is_certified(net15, seed):
    """DR sets at eta_v = 1% that miss feasibility by ~1e-5 still get a Farkas certificate."""
    amb = AmbiguityModel.fit(cio.synth_samples(net15, 0.2, 100, seed), 0.005)
    P = build(net15, Mode.DRCC, RiskConfig(Mode.DRCC, 0.01, xi=0.005), ambiguity=amb)
    r = solve(P)
    assert r.status == PRIMAL_INFEASIBLE
    bty = P.b @ r.y
    assert bty > 0
    assert np.abs(P.A.T @ r.y + r.s).max() <= 1e-5 * bty
    assert cone_gap(P, r.s) <= 1e-5 * bty
