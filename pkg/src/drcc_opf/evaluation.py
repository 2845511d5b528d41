"""Monte-Carlo replay of dispatch policies and the experiment drivers.

A dispatch is replayed against an error tensor of shape ``(S, n_bus, 2)``
holding per-bus (P, Q) net-load deviations. Each sample applies the affine
recourse, pushes the deviations through the path matrix and records limit
violations and the realized quadratic cost.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math
import time

import numpy as np
from scipy import stats

from .formulation import DispatchSolution, Mode, RiskConfig, solve_opf, voltage_variance
from .network import ValidatedNetwork, build_path_matrix
from .socp import SolverConfig
from .uncertainty import (
    AmbiguityModel,
    ErrorTreatment,
    ForecastErrorModel,
    SampleSet,
    derive_seed,
    draw_errors,
    shifted_variance,
)

# tolerance on raw limits (p.u.); interior-point solutions sit within ~1e-8 of active bounds
LIMIT_TOL = 1e-6
# half-width of the two-sided 95% binomial band quoted for n = 750
BAND_750 = 0.017


class AlphaNotNormalized(ValueError):
    pass


@dataclass
class ViolationReport:
    samples: int
    volt_upper: np.ndarray  # per bus counts
    volt_lower: np.ndarray
    gen_upper: np.ndarray  # per generator counts (active power)
    gen_lower: np.ndarray
    gen_q: np.ndarray  # reactive limit breaches, either side
    voltage_count: int  # samples with any voltage breach
    any_count: int  # samples with any breach at all
    mean_cost: float
    cost_std: float
    u_var: np.ndarray  # sample variance of realized u per bus

    @property
    def prob_voltage(self):
        return self.voltage_count / self.samples

    @property
    def prob_any(self):
        return self.any_count / self.samples

    def voltage_ci(self, level=0.95):
        return binomial_ci(self.voltage_count, self.samples, level)


def binomial_ci(k: int, n: int, level: float = 0.95):
    """Clopper-Pearson interval for a binomial proportion."""
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def realized_state(sol: DispatchSolution, net: ValidatedNetwork, errors, A=None):
    """Per-sample generator outputs, flows and voltages under the affine policy.

    Flows come from the path matrix and voltages from the path sums of flow
    deviations; :func:`network.lindistflow_state` is the independent recursion.
    """
    errors = np.asarray(errors, dtype=float)
    if errors.ndim == 2:
        errors = errors[None]
    A = build_path_matrix(net) if A is None else A
    ep, eq = errors[:, :, 0], errors[:, :, 1]
    tot_p = ep.sum(axis=1)
    tot_q = eq.sum(axis=1)
    g_p = sol.g_p[None, :] + tot_p[:, None] * sol.alpha[None, :]
    g_q = sol.g_q[None, :] + tot_q[:, None] * sol.alpha[None, :]
    a_bus = sol.alpha_bus()
    # net load deviation at non-root buses
    dp = ep[:, 1:] - tot_p[:, None] * a_bus[None, 1:]
    dq = eq[:, 1:] - tot_q[:, None] * a_bus[None, 1:]
    f_p = sol.f_p[None, :] + dp @ A.T
    f_q = sol.f_q[None, :] + dq @ A.T
    drop = (f_p - sol.f_p[None, :]) * net.r[None, 1:] + (f_q - sol.f_q[None, :]) * net.x[None, 1:]
    u = np.empty((errors.shape[0], net.n_bus))
    u[:, 0] = sol.u[0]
    u[:, 1:] = sol.u[None, 1:] - 2.0 * drop @ A
    return g_p, g_q, f_p, f_q, u


def evaluate_dispatch(sol: DispatchSolution, net: ValidatedNetwork, errors, A=None) -> ViolationReport:
    if abs(float(np.sum(sol.alpha)) - 1.0) > 1e-6 or np.any(sol.alpha < -1e-9):
        raise AlphaNotNormalized(f"participation factors sum to {np.sum(sol.alpha)!r}")
    g_p, g_q, _, _, u = realized_state(sol, net, errors, A)
    S = u.shape[0]
    up = u > net.u_max[None, :] + LIMIT_TOL
    lo = u < net.u_min[None, :] - LIMIT_TOL
    p_max, p_min, q_max = net.gen_array("p_max"), net.gen_array("p_min"), net.gen_array("q_max")
    gu = g_p > p_max[None, :] + LIMIT_TOL
    gl = g_p < p_min[None, :] - LIMIT_TOL
    gq = np.abs(g_q) > q_max[None, :] + LIMIT_TOL
    volt = (up | lo).any(axis=1)
    anyv = volt | (gu | gl | gq).any(axis=1)
    c2, c1, c0 = net.gen_array("c2"), net.gen_array("c1"), net.gen_array("c0")
    cost = (c2[None, :] * g_p**2 + c1[None, :] * g_p + c0[None, :]).sum(axis=1)
    return ViolationReport(
        samples=S,
        volt_upper=up.sum(axis=0), volt_lower=lo.sum(axis=0),
        gen_upper=gu.sum(axis=0), gen_lower=gl.sum(axis=0), gen_q=gq.sum(axis=0),
        voltage_count=int(volt.sum()), any_count=int(anyv.sum()),
        mean_cost=float(np.mean(cost)), cost_std=float(np.std(cost)),
        u_var=np.var(u, axis=0),
    )


def variance_ratio(report: ViolationReport, analytical) -> np.ndarray:
    """Empirical over analytical Var(u) per bus (NaN where the model predicts zero)."""
    analytical = np.asarray(analytical, dtype=float)
    return np.divide(report.u_var, analytical, out=np.full_like(analytical, np.nan), where=analytical > 0)


# ---------------------------------------------------------------- experiments


@dataclass(frozen=True)
class ExperimentGrid:
    eta_v: tuple = (0.01, 0.03, 0.05, 0.10)
    xi: tuple = (0.25, 0.05, 0.005)
    delta: tuple = (0.33, 0.66, 1.0)
    samples: int = 750
    seed: int = 0

    def __post_init__(self):
        for name in ("eta_v", "xi", "delta"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ValueError(f"grid axis {name} is empty")
            object.__setattr__(self, name, vals)
        if any(not 0.0 <= d <= 1.0 for d in self.delta):
            raise ValueError("delta values must lie in [0, 1]")
        if self.samples < 1:
            raise ValueError("samples must be positive")


@dataclass
class Row:
    mode: str
    eta_v: float
    xi: float
    delta: float
    status: str
    violation: float = math.nan
    ci_low: float = math.nan
    ci_high: float = math.nan
    expected_cost: float = math.nan
    realized_cost: float = math.nan
    relative_cost: float = math.nan
    extra: dict = field(default_factory=dict)


def _report_row(mode, eta_v, xi, delta, sol, net, errors, A, true_var):
    row = Row(mode.value, eta_v, xi, delta, sol.status)
    if sol.status != "Optimal":
        return row
    rep = evaluate_dispatch(sol, net, errors, A)
    row.violation = rep.prob_voltage
    row.ci_low, row.ci_high = rep.voltage_ci()
    row.expected_cost = sol.objective
    row.realized_cost = rep.mean_cost
    # empirical Var(u) over the per-line variance model at the evaluation variance
    ratio = variance_ratio(rep, voltage_variance(net, A, *true_var, sol.alpha_bus()))
    ratio = ratio[np.isfinite(ratio)]
    row.extra = {
        "prob_any": rep.prob_any,
        "var_ratio_min": float(ratio.min()) if ratio.size else math.nan,
        "var_ratio_max": float(ratio.max()) if ratio.size else math.nan,
    }
    return row


def _solve_point(args):
    net, mode, eta_v, xi, ambiguity, risk_kw, solver = args
    cfg = RiskConfig(mode=mode, eta_v=eta_v, xi=xi, **risk_kw) if mode is not Mode.DETERMINISTIC else None
    return solve_opf(net, mode, cfg, ambiguity=ambiguity, solver=solver)


def _map(fn, items, jobs):
    if jobs and jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def _normalize(rows):
    """relative_cost = expected cost over the CC expected cost at the same (eta_v, xi)."""
    ref = {(r.eta_v, r.xi): r.expected_cost for r in rows if r.mode == Mode.CC.value}
    for r in rows:
        base = ref.get((r.eta_v, r.xi), math.nan)
        r.relative_cost = r.expected_cost / base if base and np.isfinite(base) else math.nan
    return rows


def in_sample_experiment(net, samples: SampleSet, grid: ExperimentGrid, true_model: ForecastErrorModel,
                         treatment=ErrorTreatment.CONSTANT_POWER_FACTOR, risk_kw=None, jobs=1,
                         solver=SolverConfig()):
    """Deterministic, CC and DR rows per (eta_v, xi), evaluated on fresh draws from ``true_model``.

    All grid points share one evaluation tensor so differences between rows
    reflect the dispatch, not sampling noise.
    """
    risk_kw = dict(risk_kw or {}, treatment=treatment)
    errors = draw_errors(true_model, treatment, grid.samples, derive_seed(grid.seed, 1))
    true_var = (true_model.var_p, true_model.var_q)
    A = build_path_matrix(net)
    fits = {xi: AmbiguityModel.fit(samples, xi) for xi in grid.xi}
    jobs_list, keys = [], []
    det_done = False
    for eta_v in grid.eta_v:
        for xi in grid.xi:
            amb = fits[xi]
            if not det_done:
                jobs_list.append((net, Mode.DETERMINISTIC, eta_v, xi, amb, risk_kw, solver))
                keys.append(None)
                det_done = True
            for mode in (Mode.CC, Mode.DRCC):
                jobs_list.append((net, mode, eta_v, xi, amb, risk_kw, solver))
                keys.append((mode, eta_v, xi))
    sols = _map(_solve_point, jobs_list, jobs)
    det = sols[0]
    rows = []
    by_key = dict(zip(keys[1:], sols[1:]))
    for eta_v in grid.eta_v:
        for xi in grid.xi:
            # the deterministic dispatch does not depend on (eta_v, xi)
            det_row = _report_row(Mode.DETERMINISTIC, eta_v, xi, 0.0, det, net, errors, A, true_var)
            det_row.expected_cost = _det_expected_cost(det, fits[xi])
            rows.append(det_row)
            for mode in (Mode.CC, Mode.DRCC):
                rows.append(_report_row(mode, eta_v, xi, 0.0, by_key[(mode, eta_v, xi)], net, errors, A,
                                        true_var))
    return _normalize(rows)


def _det_expected_cost(sol, amb):
    """Expected cost of a deterministic dispatch run with root-only recourse at the fitted variance."""
    if sol.status != "Optimal":
        return math.nan
    c2, c1, c0 = (sol.net.gen_array(k) for k in ("c2", "c1", "c0"))
    S = float(np.sum(amb.var_hat_p))
    return float(np.sum(c2 * (sol.alpha**2 * S + sol.g_p**2) + c1 * sol.g_p + c0))


def out_of_sample_experiment(net, samples: SampleSet, grid: ExperimentGrid,
                             treatment=ErrorTreatment.CONSTANT_POWER_FACTOR, risk_kw=None, jobs=1,
                             solver=SolverConfig()):
    """CC and DR rows per (eta_v, xi, delta) evaluated on shifted distributions.

    The true variance is moved from the sample estimate toward the upper end
    of the widest ambiguity set in the grid (smallest xi); every dispatch is
    evaluated on the same shifted draws, so narrower sets can be left behind.
    """
    risk_kw = dict(risk_kw or {}, treatment=treatment)
    fits = {xi: AmbiguityModel.fit(samples, xi) for xi in grid.xi}
    widest = fits[min(grid.xi)]
    tan_phi = np.divide(net.load_q, net.load_p, out=np.zeros(net.n_bus), where=net.load_p != 0)
    base = ForecastErrorModel(np.sqrt(widest.var_hat_p), np.sqrt(widest.var_hat_q), tan_phi)
    A = build_path_matrix(net)

    jobs_list, keys = [], []
    for eta_v in grid.eta_v:
        for xi in grid.xi:
            for mode in (Mode.CC, Mode.DRCC):
                jobs_list.append((net, mode, eta_v, xi, fits[xi], risk_kw, solver))
                keys.append((mode, eta_v, xi))
    sols = dict(zip(keys, _map(_solve_point, jobs_list, jobs)))

    rows = []
    for delta in grid.delta:
        var_p = shifted_variance((widest.zeta_l_p, widest.zeta_h_p), widest.var_hat_p, delta)
        var_q = shifted_variance((widest.zeta_l_q, widest.zeta_h_q), widest.var_hat_q, delta)
        model = base.with_variance(var_p, treatment, var_q)
        # same stream for every delta: the shift only rescales the draws
        errors = draw_errors(model, treatment, grid.samples, derive_seed(grid.seed, 1))
        for eta_v in grid.eta_v:
            for xi in grid.xi:
                for mode in (Mode.CC, Mode.DRCC):
                    row = _report_row(mode, eta_v, xi, delta, sols[(mode, eta_v, xi)], net, errors, A,
                                      (model.var_p, model.var_q))
                    amb = fits[xi]
                    row.extra["outside_set"] = bool(np.any(var_p > amb.zeta_h_p * (1 + 1e-12)))
                    rows.append(row)
    return _normalize(rows)


def sample_model(samples: SampleSet, net: ValidatedNetwork) -> ForecastErrorModel:
    """Gaussian model at the sample variances (what the in-sample fit believes)."""
    tan_phi = np.divide(net.load_q, net.load_p, out=np.zeros(net.n_bus), where=net.load_p != 0)
    amb = AmbiguityModel.fit(samples, 0.5)
    return ForecastErrorModel(np.sqrt(amb.var_hat_p), np.sqrt(amb.var_hat_q), tan_phi)


@dataclass
class Timing:
    case: str
    buses: int
    mode: str
    status: str
    iterations: int
    seconds: tuple  # one entry per repeat

    @property
    def best(self):
        return min(self.seconds)

    @property
    def median(self):
        return float(np.median(self.seconds))


def time_solves(net, samples: SampleSet, eta_v=0.05, xi=0.005, modes=(Mode.DRCC,), repeats=3,
                risk_kw=None, solver=SolverConfig()):
    """Wall-clock time of build + solve + recovery per mode."""
    amb = AmbiguityModel.fit(samples, xi)
    out = []
    for mode in map(Mode, modes):
        cfg = None if mode is Mode.DETERMINISTIC else RiskConfig(mode=mode, eta_v=eta_v, xi=xi, **(risk_kw or {}))
        secs = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            sol = solve_opf(net, mode, cfg, ambiguity=amb, solver=solver)
            secs.append(time.perf_counter() - t0)
        out.append(Timing(net.case.name, net.n_bus, mode.value, sol.status, int(sol.info.get("iters", -1)),
                          tuple(secs)))
    return out
