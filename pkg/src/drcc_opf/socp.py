"""Primal-dual interior-point solver for canonical-form SOCPs.

Homogeneous self-dual embedding with Nesterov-Todd scaling and Mehrotra
predictor-corrector steps. Internally the standard-form problem

    min c^T x  s.t.  A x = b,  x in K

is posed as ``A x = b, G x + s = h, s in K'`` with ``G = -E`` selecting the
conic coordinates and ``h = 0``, so free variables need no splitting.

Nearly infeasible problems can stall the embedding before its certificate is
accurate. A stalled run is followed by a phase-one problem

    min w  s.t.  A x' - (A e) w = b - A e,  x' in K,  w >= 0

(``e`` the cone identity, ``x = x' - (w - 1) e``), which is strictly feasible
and bounded. An optimum with ``w > 1`` proves infeasibility, and its dual is
a Farkas certificate.
"""

from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np
import scipy.sparse as sp

from .conic import FREE, NONNEG, SOC, ConicProblem, Segment
from .cones import ConeSpace, identity_scaling
from .kkt import FactorizationError, KKTSystem

log = logging.getLogger(__name__)

OPTIMAL = "Optimal"
PRIMAL_INFEASIBLE = "PrimalInfeasible"
DUAL_INFEASIBLE = "DualInfeasible"
ITER_LIMIT = "IterLimit"
NUMERICAL_FAILURE = "NumericalFailure"


class MalformedProblem(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    tol_gap: float = 1e-8
    tol_feas: float = 1e-8
    max_iters: int = 100
    phase_one: bool = True  # retry stalled runs as a feasibility problem
    tol_infeas_reduced: float = 1e-5  # certificate accuracy accepted after a stall
    static_regularization: float = 1e-9
    verbose: bool = False
    backend: str | None = None  # kernel backend override: "cython" | "python"

    def __post_init__(self):
        if self.tol_gap <= 0 or self.tol_feas <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SolverResult:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    status: str
    iters: int
    primal_res: float
    dual_res: float
    gap: float
    objective: float = math.nan
    info: dict = field(default_factory=dict)


def _cone_split(problem):
    """Orthant coordinates and SOC blocks of the variable vector."""
    nonneg = []
    soc = []
    for seg in problem.segments:
        idx = np.arange(seg.start, seg.start + seg.dim)
        if seg.kind == NONNEG:
            nonneg.append(idx)
        elif seg.kind == SOC:
            soc.append(idx)
    nonneg = np.concatenate(nonneg) if nonneg else np.zeros(0, dtype=np.int64)
    return nonneg, soc


def cone_violation(problem, v):
    """Largest cone-membership violation of ``v`` over all non-free segments."""
    worst = 0.0
    for seg in problem.segments:
        w = v[seg.start : seg.start + seg.dim]
        if seg.kind == NONNEG:
            worst = max(worst, float(-w.min()))
        elif seg.kind == SOC:
            worst = max(worst, float(np.linalg.norm(w[1:]) - w[0]))
    return max(worst, 0.0)


def residuals(problem, result):
    """Recompute (primal, dual, gap) residuals of a result from scratch.

    primal: ``max(|Ax - b|_inf, cone violation of x) / (1 + |b|_inf)``
    dual:   ``max(|c - A^T y - s|_inf, |s_free|_inf, cone violation of s) / (1 + |c|_inf)``
    gap:    ``|c^T x - b^T y| / (1 + |c^T x| + |b^T y|)``
    """
    x, y, s = result.x, result.y, result.s
    A, b, c = problem.A, problem.b, problem.c
    bnorm = np.abs(b).max() if len(b) else 0.0
    cnorm = np.abs(c).max() if len(c) else 0.0
    pr = np.abs(A @ x - b).max() if len(b) else 0.0
    pr = max(pr, cone_violation(problem, x)) / (1.0 + bnorm)
    free = np.concatenate(
        [np.arange(g.start, g.start + g.dim) for g in problem.segments if g.kind == FREE]
        or [np.zeros(0, dtype=np.int64)]
    )
    dr = np.abs(c - A.T @ y - s).max() if len(c) else 0.0
    if len(free):
        dr = max(dr, np.abs(s[free]).max())
    dr = max(dr, cone_violation(problem, s)) / (1.0 + cnorm)
    pobj = float(c @ x)
    dobj = float(b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return float(pr), float(dr), float(gap)


def _presolve(problem):
    """Drop empty equality rows and empty cost-free free columns."""
    A = problem.A.tocsr()
    row_nnz = np.diff(A.indptr)
    empty_rows = row_nnz == 0
    if np.any(np.abs(problem.b[empty_rows]) > 0):
        return None
    keep_rows = np.flatnonzero(~empty_rows)
    col_nnz = np.bincount(A.indices, minlength=problem.n)
    is_free = np.zeros(problem.n, dtype=bool)
    for g in problem.segments:
        if g.kind == FREE:
            is_free[g.start : g.start + g.dim] = True
    drop_cols = is_free & (col_nnz == 0) & (problem.c == 0)
    return keep_rows, drop_cols


def solve(problem: ConicProblem, config: SolverConfig = SolverConfig()) -> SolverResult:
    """Solve ``problem``; the returned status always reflects the final residuals."""
    result = _solve(problem, config)
    if config.phase_one and result.status in (ITER_LIMIT, NUMERICAL_FAILURE):
        cert = _phase_one(problem, config)
        if cert is not None:
            y, s, iters = cert
            result = SolverResult(np.zeros(problem.n), y, s, PRIMAL_INFEASIBLE, result.iters + iters,
                                  math.inf, math.inf, math.inf, info=dict(result.info, phase_one=True))
            result.primal_res, result.dual_res, result.gap = residuals(problem, result)
            if config.verbose:
                log.info("status=%s via phase one", PRIMAL_INFEASIBLE)
    return result


def _cone_identity(problem):
    e = np.zeros(problem.n)
    for seg in problem.segments:
        if seg.kind == NONNEG:
            e[seg.start : seg.start + seg.dim] = 1.0
        elif seg.kind == SOC:
            e[seg.start] = 1.0
    return e


def _phase_one(problem, config):
    """Farkas pair (y, s) with A^T y + s = 0, s in K*, b^T y > 0, or None.

    Near the feasibility boundary b^T y is tiny and the certificate is only as
    good as the auxiliary solve, so that solve is repeated at tighter
    tolerances before giving up; it is well conditioned by construction.
    """
    e = _cone_identity(problem)
    A = sp.csr_matrix(problem.A)
    Ae = A @ e
    n = problem.n
    A1 = sp.hstack([A, sp.csr_matrix(-Ae[:, None])]).tocsr()
    c1 = np.zeros(n + 1)
    c1[n] = 1.0
    segs = tuple(problem.segments) + (Segment(NONNEG, n, 1),)
    aux = ConicProblem(c1, A1, problem.b - Ae, segs)
    free = [np.arange(g.start, g.start + g.dim) for g in problem.segments if g.kind == FREE]
    iters = 0
    for tol in sorted({config.tol_feas, 1e-10, 1e-12}, reverse=True):
        if tol > config.tol_feas:
            continue
        res = _solve(aux, replace(config, phase_one=False, tol_feas=tol, tol_gap=min(tol, config.tol_gap)))
        iters += res.iters
        if res.status != OPTIMAL:
            return None
        margin = max(1e-8, 100.0 * tol)
        if float(res.x[n]) <= 1.0 + margin:
            return None
        y = res.y
        s = -(A.T @ y)
        by = float(problem.b @ y)
        # the free block of A^T y must vanish and s must sit in the dual cone
        free_err = max((float(np.abs(s[f]).max()) for f in free if len(f)), default=0.0)
        if by > 0 and max(free_err, cone_violation(problem, s)) <= config.tol_infeas_reduced * by:
            return y, s, iters
    return None


def _solve(problem: ConicProblem, config: SolverConfig) -> SolverResult:
    n = problem.n
    if problem.A.shape[1] != n or problem.A.shape[0] != len(problem.b):
        raise MalformedProblem("A, b and c have inconsistent shapes")
    if not (np.all(np.isfinite(problem.c)) and np.all(np.isfinite(problem.b))):
        raise MalformedProblem("non-finite problem data")

    pre = _presolve(problem)
    p_full = len(problem.b)
    if pre is None:
        return SolverResult(
            np.zeros(n), np.zeros(p_full), np.zeros(n), PRIMAL_INFEASIBLE, 0,
            math.inf, math.inf, math.inf,
        )
    keep_rows, drop_cols = pre
    keep_cols = np.flatnonzero(~drop_cols)

    A = problem.A.tocsr()[keep_rows][:, keep_cols].tocsc()
    b = problem.b[keep_rows]
    c = problem.c[keep_cols]
    colmap = -np.ones(n, dtype=np.int64)
    colmap[keep_cols] = np.arange(len(keep_cols))

    nonneg, soc = _cone_split(problem)
    cone_idx = np.concatenate([nonneg] + soc) if (len(nonneg) or soc) else np.zeros(0, dtype=np.int64)
    space = ConeSpace(len(nonneg), [len(s) for s in soc])
    m = space.dim
    nr = len(keep_cols)
    G = sp.csr_matrix(
        (-np.ones(m), (np.arange(m), colmap[cone_idx])), shape=(m, nr)
    )
    h = np.zeros(m)

    # row equilibration of A and scalar cost scaling
    row_scale = np.ones(len(b))
    if len(b):
        rmax = np.abs(A).max(axis=1).toarray().ravel()
        row_scale = 1.0 / np.where(rmax > 0, rmax, 1.0)
    As = sp.diags(row_scale) @ A
    bs = row_scale * b
    c_scale = max(1.0, float(np.abs(c).max()) if len(c) else 1.0)
    cs = c / c_scale

    bnorm = float(np.abs(problem.b).max()) if p_full else 0.0
    cnorm = float(np.abs(problem.c).max()) if n else 0.0

    def to_original(xv, yv, zv, sv, tau):
        """Candidate standard-form (x, y, s) from internal iterates."""
        x = np.zeros(n)
        x[keep_cols] = xv / tau
        x[cone_idx] = sv / tau
        y = np.zeros(p_full)
        y[keep_rows] = -c_scale * row_scale * yv / tau
        s = np.zeros(n)
        s[cone_idx] = c_scale * zv / tau
        return x, y, s

    def evaluate(xv, yv, zv, sv, tau):
        x, y, s = to_original(xv, yv, zv, sv, tau)
        res = SolverResult(x, y, s, "", 0, 0.0, 0.0, 0.0)
        return (x, y, s), residuals(problem, res)

    try:
        kkt = KKTSystem(As, G, space, config.static_regularization, config.backend)
    except FactorizationError as exc:
        raise MalformedProblem(str(exc)) from exc

    At = As.T.tocsr()
    Gt = G.T.tocsr()
    e = space.identity()
    nx, ny = nr, len(bs)

    def solve_kkt(rx, ry, rz):
        sol = kkt.solve(np.concatenate([rx, ry, rz]))
        return sol[:nx], sol[nx : nx + ny], sol[nx + ny :]

    status = NUMERICAL_FAILURE
    it = 0
    best = None
    best_cert = {PRIMAL_INFEASIBLE: (math.inf, None), DUAL_INFEASIBLE: (math.inf, None)}
    try:
        # initial point
        kkt.factor(identity_scaling(space))
        xv, _, zt = solve_kkt(np.zeros(nx), bs, h)
        sv = -zt
        _, yv, zv = solve_kkt(-cs, np.zeros(ny), np.zeros(m))
        # push both into the interior; a point near the boundary gives an unbounded NT scaling
        if m:
            for v in (sv, zv):
                a = space.min_eig(v)
                if a <= 1e-8 * max(1.0, float(np.linalg.norm(v))):
                    v += (1.0 - a) * e
        tau, kap = 1.0, 1.0

        for it in range(config.max_iters + 1):
            cand, (pr, dr, gp) = evaluate(xv, yv, zv, sv, tau)
            if config.verbose:
                log.info("iter %3d  pres %.2e  dres %.2e  gap %.2e  tau %.2e  kap %.2e", it, pr, dr, gp, tau, kap)
            if best is None or max(pr, dr, gp) < best[1]:
                best = (cand, max(pr, dr, gp), (pr, dr, gp))
            if pr <= config.tol_feas and dr <= config.tol_feas and gp <= config.tol_gap:
                status = OPTIMAL
                break

            # infeasibility certificates (internal scaling is harmless: ratios)
            byhz = float(bs @ yv + h @ zv)
            if config.verbose:
                log.info("      b.y %.3e  |A'y+G'z| %.3e  c.x %.3e", byhz, np.abs(At @ yv + Gt @ zv).max(), float(cs @ xv))
            if byhz < 0:
                cert = np.abs(At @ yv + Gt @ zv).max() / -byhz
                if cert < best_cert[PRIMAL_INFEASIBLE][0]:
                    best_cert[PRIMAL_INFEASIBLE] = (cert, (xv, yv, zv, sv))
                if cert <= config.tol_feas:
                    status = PRIMAL_INFEASIBLE
                    break
            cx = float(cs @ xv)
            if cx < 0:
                cert = max(
                    np.abs(As @ xv).max() if ny else 0.0, np.abs(G @ xv + sv).max() if m else 0.0
                ) / -cx
                if cert < best_cert[DUAL_INFEASIBLE][0]:
                    best_cert[DUAL_INFEASIBLE] = (cert, (xv, yv, zv, sv))
                if cert <= config.tol_feas:
                    status = DUAL_INFEASIBLE
                    break
            if it == config.max_iters:
                status = ITER_LIMIT
                break

            scaling = space.nt_scaling(sv, zv)
            lam = scaling.lam
            rx = At @ yv + Gt @ zv + cs * tau
            ry = As @ xv - bs * tau
            rz = G @ xv + sv - h * tau
            rt = float(cs @ xv + bs @ yv + h @ zv) + kap
            mu = (float(sv @ zv) + tau * kap) / (space.degree + 1)
            if config.verbose:
                log.info("      |rx| %.3e  |ry| %.3e  |rz| %.3e  rt %.3e  mu %.3e", np.abs(rx).max(),
                         np.abs(ry).max() if ny else 0.0, np.abs(rz).max() if m else 0.0, rt, mu)

            kkt.factor(scaling)
            x1, y1, z1 = solve_kkt(-cs, bs, h)
            denom = float(cs @ x1 + bs @ y1 + h @ z1) - kap / tau

            def direction(sig, ds_target, dk_target):
                rhs_z = -(1 - sig) * rz + scaling.apply(space.div(lam, ds_target))
                x2, y2, z2 = solve_kkt(-(1 - sig) * rx, -(1 - sig) * ry, rhs_z)
                rhs_t = -(1 - sig) * rt + dk_target / tau
                dtau = (rhs_t - float(cs @ x2 + bs @ y2 + h @ z2)) / denom
                dx = x2 + dtau * x1
                dy = y2 + dtau * y1
                dz = z2 + dtau * z1
                wdz = scaling.apply(dz)
                # ds from the linear block keeps the residual decrease exact
                ds = -(1 - sig) * rz - G @ dx + h * dtau
                ds_sc = scaling.apply_inv(ds)
                dkap = -(dk_target + kap * dtau) / tau
                return dx, dy, dz, dtau, dkap, ds, ds_sc, wdz

            def step_to_boundary(ds_sc, wdz, dtau, dkap):
                alpha = min(space.max_step(lam, ds_sc), space.max_step(lam, wdz)) if m else np.inf
                if dtau < 0:
                    alpha = min(alpha, -tau / dtau)
                if dkap < 0:
                    alpha = min(alpha, -kap / dkap)
                return alpha

            # predictor
            lam2 = space.prod(lam, lam)
            dxa, dya, dza, dta, dka, _, dsa, wdza = direction(0.0, lam2, kap * tau)
            alpha_a = min(1.0, step_to_boundary(dsa, wdza, dta, dka))
            sigma = min(1.0, max(1e-4, (1.0 - alpha_a) ** 3))

            # corrector
            ds_t = lam2 + space.prod(dsa, wdza) - sigma * mu * e
            dk_t = kap * tau + dka * dta - sigma * mu
            dx, dy, dz, dtau, dkap, ds, ds_sc, wdz = direction(sigma, ds_t, dk_t)
            alpha = min(1.0, 0.99 * step_to_boundary(ds_sc, wdz, dtau, dkap))
            if config.verbose:
                log.info("      alpha_aff %.3f  sigma %.2e  alpha %.3f", alpha_a, sigma, alpha)
            if alpha < 1e-10:
                status = NUMERICAL_FAILURE
                break

            xv = xv + alpha * dx
            yv = yv + alpha * dy
            sv = sv + alpha * ds
            zv = zv + alpha * dz
            tau = tau + alpha * dtau
            kap = kap + alpha * dkap
            if not (np.isfinite(tau) and tau > 0):
                status = NUMERICAL_FAILURE
                break
    except FactorizationError as exc:
        log.debug("factorization failed: %s", exc)
        status = NUMERICAL_FAILURE

    if status in (ITER_LIMIT, NUMERICAL_FAILURE):
        # reduced-accuracy certificate, accepted only when the iterates stalled
        kind = min(best_cert, key=lambda k: best_cert[k][0])
        if best_cert[kind][0] <= config.tol_infeas_reduced:
            status = kind
            xv, yv, zv, sv = best_cert[kind][1]
            if config.verbose:
                log.info("accepting reduced-accuracy certificate %.2e", best_cert[kind][0])

    if status == OPTIMAL:
        x, y, s = cand
    elif status in (PRIMAL_INFEASIBLE, DUAL_INFEASIBLE):
        x, y, s = to_original(xv, yv, zv, sv, 1.0)
    elif best is not None:
        x, y, s = best[0]
    else:
        x, y, s = np.zeros(n), np.zeros(p_full), np.zeros(n)
    result = SolverResult(x, y, s, status, it, 0.0, 0.0, 0.0)
    result.primal_res, result.dual_res, result.gap = residuals(problem, result)
    result.objective = problem.objective(x) if status == OPTIMAL else math.nan
    result.info = {"factor_nnz": kkt.factor_nnz, "kkt_dim": kkt.N, "backend": kkt.kern.__name__}
    if config.verbose:
        log.info("status=%s iters=%d pres=%.3e dres=%.3e gap=%.3e", status, it,
                 result.primal_res, result.dual_res, result.gap)
    return result
