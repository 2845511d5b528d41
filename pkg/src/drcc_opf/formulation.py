"""Deterministic, chance-constrained and distributionally robust OPF as SOCPs.

Decision variables per generator ``g``: base outputs ``gp``, ``gq`` and a
participation factor ``alpha`` (CC/DR only). Per line (indexed by its
downstream bus): base flows ``fp``, ``fq``. Per bus: squared voltage ``u``.

Generation limits under affine recourse tighten linearly by
``z_g * alpha * sqrt(total variance)``. Voltage limits tighten by
``z_v * std(u_i)``, where ``std(u_i)`` is bounded by a second-order cone in
``alpha``. Two voltage-variance models are available: ``"literal"``, the
per-line sum that ignores covariance between flow deviations on different
lines of a path, and ``"exact"``, the full variance of the affine policy.
"""

from dataclasses import dataclass, field
import enum
import math

import numpy as np

from .conic import ConicProblem, ProblemBuilder
from .network import ValidatedNetwork, build_path_matrix, lindistflow_state
from .socp import OPTIMAL, PRIMAL_INFEASIBLE, SolverConfig, SolverResult, solve
from .uncertainty import AmbiguityModel, ErrorTreatment, normal_quantile


class Mode(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    CC = "cc"
    DRCC = "drcc"


VARIANCE_MODELS = ("literal", "exact")


class ResidualTooLarge(RuntimeError):
    pass


class StatusNotOptimal(RuntimeError):
    def __init__(self, status):
        super().__init__(f"solver status {status}")
        self.status = status


@dataclass(frozen=True)
class RiskConfig:
    mode: Mode = Mode.CC
    eta_v: float = 0.05
    eta_g: float | None = None  # defaults to eta_v
    xi: float = 0.05
    eta_f: float | None = None  # accepted for completeness, no flow chance constraint exists
    variance_model: str = "literal"
    treatment: ErrorTreatment = ErrorTreatment.CONSTANT_POWER_FACTOR

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.eta_g is None:
            object.__setattr__(self, "eta_g", self.eta_v)
        for name in ("eta_v", "eta_g"):
            v = getattr(self, name)
            if not 0.0 < v < 0.5:
                raise ValueError(f"{name} must lie in (0, 1/2), got {v}")
        if not 0.0 < self.xi < 1.0:
            raise ValueError(f"xi must lie in (0, 1), got {self.xi}")
        if self.variance_model not in VARIANCE_MODELS:
            raise ValueError(f"variance_model must be one of {VARIANCE_MODELS}")

    @property
    def z_g(self):
        return normal_quantile(1.0 - self.eta_g)

    @property
    def z_v(self):
        return normal_quantile(1.0 - self.eta_v)


@dataclass
class DispatchSolution:
    g_p: np.ndarray
    g_q: np.ndarray
    alpha: np.ndarray
    f_p: np.ndarray  # per line, line k feeds internal bus k+1
    f_q: np.ndarray
    u: np.ndarray  # per internal bus
    objective: float
    status: str
    mode: Mode
    total_var_p: float = 0.0
    total_var_q: float = 0.0
    info: dict = field(default_factory=dict)
    net: ValidatedNetwork | None = field(default=None, repr=False, compare=False)

    def alpha_bus(self):
        """Participation factors aggregated per internal bus."""
        out = np.zeros(self.net.n_bus)
        np.add.at(out, self.net.gen_bus, self.alpha)
        return out


def default_alpha(net: ValidatedNetwork) -> np.ndarray:
    """Recourse used for deterministic dispatches: root generators share the imbalance."""
    at_root = (net.gen_bus == 0).astype(float)
    return at_root / at_root.sum()


# ---------------------------------------------------------------- variances


def voltage_variance(net, A, var_p, var_q, alpha, total_var_p=None, total_var_q=None):
    """Per-bus Var(u) from the per-line sum (literal model); root entry is 0.

    ``alpha`` is per bus (zero where no generator). The totals default to the
    sums of the per-bus variances.
    """
    var_p = np.asarray(var_p, dtype=float)
    var_q = np.asarray(var_q, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    sp_ = var_p.sum() if total_var_p is None else total_var_p
    sq = var_q.sum() if total_var_q is None else total_var_q
    R2 = net.r[1:] ** 2
    X2 = net.x[1:] ** 2
    inner_p = A @ (var_p[1:] + alpha[1:] ** 2 * sp_)
    inner_q = A @ (var_q[1:] + alpha[1:] ** 2 * sq)
    out = np.zeros(net.n_bus)
    out[1:] = 4.0 * (A.T @ (R2 * inner_p + X2 * inner_q))
    return out


def _shared_path(net, A):
    """rho[i, m] = sum_k a_ki a_km R_k, chi likewise with X (bus-indexed, root zero)."""
    n = net.n_bus
    rho = np.zeros((n, n))
    chi = np.zeros((n, n))
    rho[1:, 1:] = A.T @ (net.r[1:, None] * A)
    chi[1:, 1:] = A.T @ (net.x[1:, None] * A)
    return rho, chi


def voltage_variance_exact(net, A, var_p, var_q, alpha, treatment=ErrorTreatment.CONSTANT_POWER_FACTOR):
    """Full variance of u under the affine policy, including path covariances."""
    alpha = np.asarray(alpha, dtype=float)
    rho, chi = _shared_path(net, A)
    ra = rho @ alpha
    xa = chi @ alpha
    sig_p = np.sqrt(np.asarray(var_p, dtype=float))
    if treatment is ErrorTreatment.CONSTANT_POWER_FACTOR:
        tan_phi = np.divide(net.load_q, net.load_p, out=np.zeros(net.n_bus), where=net.load_p != 0)
        coef = (rho - ra[:, None]) + tan_phi[None, :] * (chi - xa[:, None])
        return 4.0 * (coef**2 @ sig_p**2)
    sig_q = np.sqrt(np.asarray(var_q, dtype=float))
    cp = rho - ra[:, None]
    cq = chi - xa[:, None]
    return 4.0 * (cp**2 @ sig_p**2 + cq**2 @ sig_q**2)


def expected_cost(solution: DispatchSolution, total_var_p: float, net: ValidatedNetwork | None = None) -> float:
    """sum_g c2 (alpha^2 totalVar + gp^2) + c1 gp + c0."""
    net = net or solution.net
    c2, c1, c0 = net.gen_array("c2"), net.gen_array("c1"), net.gen_array("c0")
    a, g = solution.alpha, solution.g_p
    return float(np.sum(c2 * (a**2 * total_var_p + g**2) + c1 * g + c0))


# ---------------------------------------------------------------- builders


def build_deterministic(net: ValidatedNetwork, include_flow_limits: bool = False) -> ConicProblem:
    zero = np.zeros(net.n_bus)
    return _build(net, Mode.DETERMINISTIC, zero, zero, None, include_flow_limits)


def build_cc(net: ValidatedNetwork, var_p, var_q, config: RiskConfig) -> ConicProblem:
    return _build(net, Mode.CC, np.asarray(var_p, float), np.asarray(var_q, float), config, False)


def build_drcc(net: ValidatedNetwork, ambiguity: AmbiguityModel, config: RiskConfig) -> ConicProblem:
    return _build(net, Mode.DRCC, np.asarray(ambiguity.zeta_h_p, float),
                  np.asarray(ambiguity.zeta_h_q, float), config, False)


def _build(net, mode, var_p, var_q, config, flow_limits):
    n, G = net.n_bus, net.n_gen
    if var_p.shape != (n,) or var_q.shape != (n,):
        raise ValueError(f"variances must have one entry per bus ({n})")
    if np.any(var_p < 0) or np.any(var_q < 0):
        raise ValueError("variances must be nonnegative")
    stochastic = mode is not Mode.DETERMINISTIC
    S_p = float(var_p.sum())
    S_q = float(var_q.sum())
    z_g = config.z_g if stochastic else 0.0
    z_v = config.z_v if stochastic else 0.0
    gens = net.generators
    pb = ProblemBuilder()

    gp = pb.free("gp", G)
    gq = pb.free("gq", G)
    fp = pb.free("fp", n - 1)
    fq = pb.free("fq", n - 1)
    u = pb.free("u", n)
    alpha = pb.nonneg("alpha", G) if stochastic else np.zeros(0, dtype=np.int64)

    def line(i):  # variable position of the line feeding bus i
        return i - 1

    gens_at = [[] for _ in range(n)]
    for g, b in enumerate(net.gen_bus):
        gens_at[b].append(g)

    # power balance: line flow = own net load + downstream flows; root closes the balance
    for i in range(n):
        kids = list(net.children[i])
        for f, g_var, load in ((fp, gp, net.load_p), (fq, gq, net.load_q)):
            terms = [(g_var[gens_at[i]], 1.0)] if gens_at[i] else []
            terms += [(f[[line(k) for k in kids]], -1.0)] if kids else []
            if i > 0:
                terms.append((f[line(i)], 1.0))
                # f_i + sum g - sum f_child = d_i
                pb.eq(terms, load[i])
            else:
                pb.eq(terms, load[0])
    pb.eq([(u[0], 1.0)], 1.0)
    for i in range(1, n):
        pb.eq([(u[i], 1.0), (u[net.parent[i]], -1.0), (fp[line(i)], 2 * net.r[i]), (fq[line(i)], 2 * net.x[i])], 0.0)
    if stochastic:
        pb.eq([(alpha, 1.0)], 1.0)

    # generation limits, tightened by z_g alpha sqrt(S)
    rp, rq = z_g * math.sqrt(S_p), z_g * math.sqrt(S_q)
    for g, gen in enumerate(gens):
        def limit(var, sign, tight, bound, name):
            if not np.isfinite(bound):
                return
            s = pb.nonneg(f"{name}[{g}]", 1)
            terms = [(var[g], sign), (s, 1.0)]
            if stochastic and tight:
                terms.append((alpha[g], tight))
            pb.eq(terms, sign * bound)

        limit(gp, 1.0, rp, gen.p_max, "gp_up")
        limit(gp, -1.0, rp, gen.p_min, "gp_lo")
        limit(gq, 1.0, rq, gen.q_max, "gq_up")
        limit(gq, -1.0, rq, -gen.q_max, "gq_lo")

    # voltage limits
    A = build_path_matrix(net)
    std_vars = _voltage_std_cones(pb, net, A, var_p, var_q, S_p, S_q, alpha, gens_at, config, stochastic)
    for i in range(1, n):
        for sign, bound, name in ((1.0, net.u_max[i], "u_up"), (-1.0, net.u_min[i], "u_lo")):
            s = pb.nonneg(f"{name}[{i}]", 1)
            terms = [(u[i], sign), (s, 1.0)]
            if std_vars.get(i) is not None:
                terms.append((std_vars[i], z_v))
            pb.eq(terms, sign * bound)

    # flow limits (deterministic only)
    if flow_limits:
        for i in range(1, n):
            if np.isfinite(net.s_max[i]):
                c = pb.soc(f"flow[{i}]", 3)
                pb.eq([(c[0], 1.0)], net.s_max[i])
                pb.eq([(c[1], 1.0), (fp[line(i)], -1.0)], 0.0)
                pb.eq([(c[2], 1.0), (fq[line(i)], -1.0)], 0.0)

    # objective: sum c2 (alpha^2 S + gp^2) + c1 gp + c0
    offset = 0.0
    for g, gen in enumerate(gens):
        offset += gen.c0
        if gen.c1:
            pb.cost(gp[g], gen.c1)
        if gen.c2 > 0:
            with_alpha = stochastic and S_p > 0
            c = pb.soc(f"cost[{g}]", 4 if with_alpha else 3)
            # (t0, t1, 2 gp, 2 sqrt(S) alpha) with t0 - t1 = 2 encodes t0 - 1 >= gp^2 + S alpha^2
            pb.eq([(c[0], 1.0), (c[1], -1.0)], 2.0)
            pb.eq([(c[2], 1.0), (gp[g], -2.0)], 0.0)
            if with_alpha:
                pb.eq([(c[3], 1.0), (alpha[g], -2.0 * math.sqrt(S_p))], 0.0)
            pb.cost(c[0], gen.c2)
            offset -= gen.c2
    pb.offset = offset

    meta = {
        "mode": mode.value,
        "S_p": S_p,
        "S_q": S_q,
        "z_g": z_g,
        "z_v": z_v,
        "var_p": var_p.copy(),
        "var_q": var_q.copy(),
        "variance_model": config.variance_model if stochastic else "none",
        "treatment": (config.treatment if stochastic else ErrorTreatment.CONSTANT_POWER_FACTOR).value,
        "flow_limits": bool(flow_limits),
    }
    return pb.build(meta)


def _voltage_std_cones(pb, net, A, var_p, var_q, S_p, S_q, alpha, gens_at, config, stochastic):
    """Add cones t_i >= std(u_i) and return {bus: t_i index} (None if std is identically 0)."""
    n = net.n_bus
    out = {}
    if not stochastic:
        return out
    gen_buses = [j for j in range(1, n) if gens_at[j]]

    def alpha_terms(j, coef):
        return [(alpha[g], coef) for g in gens_at[j]]

    if config.variance_model == "literal":
        R2 = net.r[1:] ** 2
        X2 = net.x[1:] ** 2
        const = np.zeros(n)
        const[1:] = A.T @ (R2 * (A @ var_p[1:]) + X2 * (A @ var_q[1:]))
        # w[i, j] = sum_k a_ki a_kj (R_k^2 S_p + X_k^2 S_q)
        W = np.zeros((n, n))
        W[1:, 1:] = A.T @ ((R2 * S_p + X2 * S_q)[:, None] * A)
        for i in range(1, n):
            tail = [j for j in gen_buses if W[i, j] > 0]
            has_const = const[i] > 0
            if not tail and not has_const:
                out[i] = None
                continue
            c = pb.soc(f"vstd[{i}]", 1 + int(has_const) + len(tail))
            k = 1
            if has_const:
                pb.eq([(c[k], 1.0)], 2.0 * math.sqrt(const[i]))
                k += 1
            for j in tail:
                pb.eq([(c[k], 1.0)] + alpha_terms(j, -2.0 * math.sqrt(W[i, j])), 0.0)
                k += 1
            out[i] = c[0]
        return out

    # exact: du_i = -2 sum_m s_m (base_im - pull_i(m) . alpha_bus) xi_m with xi_m iid standard
    rho, chi = _shared_path(net, A)
    sources = []  # (sigma_m, base[:, m], pull) per independent noise source
    sig_p = np.sqrt(var_p)
    sig_q = np.sqrt(var_q)
    if config.treatment is ErrorTreatment.CONSTANT_POWER_FACTOR:
        tan_phi = np.divide(net.load_q, net.load_p, out=np.zeros(n), where=net.load_p != 0)
        for m in range(n):
            if sig_p[m] > 0:
                base = rho[:, m] + tan_phi[m] * chi[:, m]
                pull = rho + tan_phi[m] * chi  # pull[i, j] multiplies alpha_bus[j]
                sources.append((sig_p[m], base, pull))
    else:
        for m in range(n):
            if sig_p[m] > 0:
                sources.append((sig_p[m], rho[:, m], rho))
            if sig_q[m] > 0:
                sources.append((sig_q[m], chi[:, m], chi))
    for i in range(1, n):
        entries = []
        for s, base, pull in sources:
            coefs = {j: pull[i, j] for j in gen_buses if pull[i, j] != 0}
            if base[i] == 0 and not coefs:
                continue
            entries.append((s, base[i], coefs))
        if not entries:
            out[i] = None
            continue
        c = pb.soc(f"vstd[{i}]", 1 + len(entries))
        for k, (s, b0, coefs) in enumerate(entries, start=1):
            terms = [(c[k], 1.0)]
            for j, v in coefs.items():
                terms += alpha_terms(j, 2.0 * s * v)
            pb.eq(terms, 2.0 * s * b0)
        out[i] = c[0]
    return out


# ---------------------------------------------------------------- recovery


def recover_solution(problem: ConicProblem, raw, net: ValidatedNetwork, tol: float = 1e-6) -> DispatchSolution:
    """Extract a dispatch from a solver result (or raw primal vector) and re-verify it."""
    status = OPTIMAL
    if isinstance(raw, SolverResult):
        status = raw.status
        if status != OPTIMAL:
            raise StatusNotOptimal(status)
        x = raw.x
        info = {"iters": raw.iters, "solver_objective": raw.objective}
    else:
        x = np.asarray(raw, dtype=float)
        info = {}
    meta = problem.meta
    mode = Mode(meta["mode"])
    stochastic = mode is not Mode.DETERMINISTIC
    g_p = problem.value(x, "gp")
    g_q = problem.value(x, "gq")
    alpha = problem.value(x, "alpha") if stochastic else default_alpha(net)
    if stochastic:
        # the solver meets sum(alpha) = 1 to its scaled tolerance; the recourse must balance exactly
        alpha = np.maximum(alpha, 0.0)
        if abs(alpha.sum() - 1.0) <= tol:
            alpha = alpha / alpha.sum()
    sol = DispatchSolution(
        g_p=g_p.copy(), g_q=g_q.copy(), alpha=alpha.copy(),
        f_p=problem.value(x, "fp").copy(), f_q=problem.value(x, "fq").copy(),
        u=problem.value(x, "u").copy(), objective=math.nan, status=status, mode=mode,
        total_var_p=meta["S_p"], total_var_q=meta["S_q"], info=info, net=net,
    )
    check_solution(sol, problem, net, tol)
    sol.objective = expected_cost(sol, meta["S_p"], net)
    solver_obj = problem.objective(x)
    if abs(sol.objective - solver_obj) > tol * max(1.0, abs(solver_obj)):
        raise ResidualTooLarge(f"objective mismatch: recomputed {sol.objective} vs solver {solver_obj}")
    return sol


def _net_injection(net, g_p, g_q):
    inj_p = net.load_p.copy()
    inj_q = net.load_q.copy()
    np.subtract.at(inj_p, net.gen_bus, g_p)
    np.subtract.at(inj_q, net.gen_bus, g_q)
    return inj_p, inj_q


def constraint_report(sol: DispatchSolution, problem: ConicProblem, net: ValidatedNetwork) -> dict:
    """Largest violation of each constraint family (positive means violated)."""
    meta = problem.meta
    inj_p, inj_q = _net_injection(net, sol.g_p, sol.g_q)
    state = lindistflow_state(net, inj_p, inj_q)
    rep = {
        "flow_p": float(np.abs(state.f_p - sol.f_p).max(initial=0.0)),
        "flow_q": float(np.abs(state.f_q - sol.f_q).max(initial=0.0)),
        "voltage": float(np.abs(state.u - sol.u).max()),
        # root balance: substation output equals total net load
        "root_balance": float(abs(inj_p.sum())),
        "root_balance_q": float(abs(inj_q.sum())),
    }
    z_g, z_v = meta["z_g"], meta["z_v"]
    sp_, sq = math.sqrt(meta["S_p"]), math.sqrt(meta["S_q"])
    a = sol.alpha if Mode(meta["mode"]) is not Mode.DETERMINISTIC else np.zeros_like(sol.alpha)
    p_max, p_min, q_max = net.gen_array("p_max"), net.gen_array("p_min"), net.gen_array("q_max")
    with np.errstate(invalid="ignore"):
        gen_viol = np.concatenate([
            sol.g_p + z_g * a * sp_ - p_max,
            p_min - (sol.g_p - z_g * a * sp_),
            sol.g_q + z_g * a * sq - q_max,
            -q_max - (sol.g_q - z_g * a * sq),
        ])
    rep["generation"] = float(np.nanmax(gen_viol[np.isfinite(gen_viol)], initial=-np.inf))
    if Mode(meta["mode"]) is Mode.DETERMINISTIC:
        std = np.zeros(net.n_bus)
    else:
        A = build_path_matrix(net)
        ab = sol.alpha_bus()
        if meta["variance_model"] == "literal":
            var = voltage_variance(net, A, meta["var_p"], meta["var_q"], ab, meta["S_p"], meta["S_q"])
        else:
            var = voltage_variance_exact(net, A, meta["var_p"], meta["var_q"], ab, ErrorTreatment(meta["treatment"]))
        std = np.sqrt(np.maximum(var, 0.0))
    rep["voltage_limits"] = float(max(
        (sol.u[1:] + z_v * std[1:] - net.u_max[1:]).max(initial=-np.inf),
        (net.u_min[1:] - (sol.u[1:] - z_v * std[1:])).max(initial=-np.inf),
    ))
    rep["alpha_sum"] = float(abs(sol.alpha.sum() - 1.0))
    rep["alpha_neg"] = float(max(0.0, -sol.alpha.min(initial=0.0)))
    if meta.get("flow_limits"):
        smax = net.s_max[1:]
        fin = np.isfinite(smax)
        rep["flow_limits"] = float((np.hypot(sol.f_p, sol.f_q) - smax)[fin].max(initial=-np.inf))
    return rep


def check_solution(sol, problem, net, tol=1e-6):
    rep = constraint_report(sol, problem, net)
    bad = {k: v for k, v in rep.items() if v > tol}
    if bad:
        raise ResidualTooLarge(f"residuals above {tol}: {bad}")
    return rep


# ---------------------------------------------------------------- one-shot


def build(net, mode, config=None, var_p=None, var_q=None, ambiguity=None, include_flow_limits=False):
    mode = Mode(mode)
    if mode is Mode.DETERMINISTIC:
        return build_deterministic(net, include_flow_limits)
    config = config or RiskConfig(mode=mode)
    if mode is Mode.CC:
        if var_p is None:
            var_p, var_q = ambiguity.var_hat_p, ambiguity.var_hat_q
        return build_cc(net, var_p, var_q, config)
    return build_drcc(net, ambiguity, config)


def solve_opf(net, mode, config=None, var_p=None, var_q=None, ambiguity=None,
              include_flow_limits=False, solver=SolverConfig()) -> DispatchSolution:
    """Build, solve and recover; infeasible or failed solves come back with NaN fields."""
    problem = build(net, mode, config, var_p, var_q, ambiguity, include_flow_limits)
    res = solve(problem, solver)
    if res.status != OPTIMAL:
        status = "Infeasible" if res.status == PRIMAL_INFEASIBLE else res.status
        nan = lambda k: np.full(k, np.nan)  # noqa: E731
        return DispatchSolution(
            nan(net.n_gen), nan(net.n_gen), nan(net.n_gen), nan(net.n_line), nan(net.n_line),
            nan(net.n_bus), math.nan, status, Mode(mode), problem.meta["S_p"], problem.meta["S_q"],
            {"iters": res.iters}, net,
        )
    return recover_solution(problem, res, net)
