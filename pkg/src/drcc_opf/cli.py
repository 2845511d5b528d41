"""Command-line entry point: ``drcc-opf {solve,evaluate,sweep,oos,bench}``.

Exit codes: 0 success, 1 usage or input error, 2 infeasible, 3 solver failure.
Every command that draws random numbers needs a seed, either ``--seed`` or
``seed=`` inside a ``--samples N=...`` spec.
"""

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io as cio
from .evaluation import ExperimentGrid, evaluate_dispatch, in_sample_experiment, out_of_sample_experiment, time_solves
from .formulation import Mode, RiskConfig, solve_opf
from .network import NetworkError
from .socp import SolverConfig
from .uncertainty import AmbiguityModel, ErrorTreatment, ForecastErrorModel, SampleSet, draw_errors

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 1, 2, 3

TREATMENTS = {
    "cpf": ErrorTreatment.CONSTANT_POWER_FACTOR,
    "independent": ErrorTreatment.INDEPENDENT_PQ,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p, risk=True):
    p.add_argument("--case", required=True, help="case file or bundled case name (15bus, feeder37, feeder123)")
    p.add_argument("--samples", help="samples CSV, or N=<count>[,seed=<s>][,k=<frac>] for synthetic draws")
    p.add_argument("--seed", type=int, help="seed for every random draw")
    p.add_argument("--k", type=float, default=0.2, help="error std as a fraction of the load (default 0.2)")
    p.add_argument("--treatment", choices=sorted(TREATMENTS), default="cpf")
    p.add_argument("--output", help="output file (default under $%s or the working directory)" % cio.OUTPUT_ENV)
    p.add_argument("--verbose", action="store_true", help="log solver iterations to stderr")
    if risk:
        p.add_argument("--eta-g", type=float, help="generator violation level (default: eta-v)")
        p.add_argument("--eta-f", type=float, help="accepted and ignored; there is no flow chance constraint")
        p.add_argument("--variance-model", choices=("literal", "exact"), default="literal")


def build_parser():
    parser = _Parser(prog="drcc-opf", description="Chance-constrained optimal power flow on radial feeders.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one dispatch and write a solution file")
    _common(p)
    p.add_argument("--mode", choices=[m.value for m in Mode], required=True)
    p.add_argument("--eta-v", type=float, default=0.05)
    p.add_argument("--xi", type=float, default=0.05)
    p.add_argument("--flow-limits", action="store_true", help="enforce deterministic line limits")

    p = sub.add_parser("evaluate", help="replay a solution against samples")
    _common(p, risk=False)
    p.add_argument("--solution", required=True)

    for name, desc in (("sweep", "in-sample grid over eta_v and xi"),
                       ("oos", "out-of-sample grid over eta_v, xi and delta")):
        p = sub.add_parser(name, help=desc)
        _common(p)
        p.add_argument("--eta-v", type=_floats, default=(0.01, 0.03, 0.05, 0.10))
        p.add_argument("--xi", type=_floats, default=(0.25, 0.05, 0.005))
        if name == "oos":
            p.add_argument("--delta", type=_floats, default=(0.33, 0.66, 1.0))
        p.add_argument("--eval-samples", type=int, default=750, help="Monte-Carlo draws per evaluation")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for the solves")

    p = sub.add_parser("bench", help="time DR solves on one or more cases")
    p.add_argument("--case", required=True, nargs="+")
    p.add_argument("--samples", default="N=100")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=float, default=0.2)
    p.add_argument("--eta-v", type=float, default=0.05)
    p.add_argument("--xi", type=float, default=0.005)
    p.add_argument("--mode", choices=[m.value for m in Mode], nargs="+", default=["drcc"])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--backend", choices=("cython", "python"))
    p.add_argument("--output")
    p.add_argument("--verbose", action="store_true")
    return parser


# ---------------------------------------------------------------- helpers


def _out_path(args, default_name):
    if args.output:
        return Path(args.output)
    return cio.output_dir() / default_name


def _samples(args, net, required=True):
    """SampleSet from a CSV or a synthetic spec; the spec's seed falls back to --seed."""
    if not args.samples:
        if required:
            raise UsageError("--samples is required for this command")
        return None
    treatment = TREATMENTS[getattr(args, "treatment", "cpf")]
    if "=" in args.samples and not Path(args.samples).exists():
        try:
            spec = cio.parse_sample_spec(args.samples)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        seed = spec.get("seed", args.seed)
        if seed is None:
            raise UsageError("synthetic samples need a seed (--seed or seed= in --samples)")
        k = spec.get("k", args.k)
        if treatment is ErrorTreatment.CONSTANT_POWER_FACTOR:
            return cio.synth_samples(net, k, spec["n"], seed)
        model = ForecastErrorModel.from_loads(net.load_p, net.load_q, k, treatment)
        return SampleSet.from_tensor(draw_errors(model, treatment, spec["n"], seed))
    return cio.read_samples(args.samples, net, treatment)


def _risk_config(args, mode, eta_v, xi):
    if mode is Mode.DETERMINISTIC:
        return None
    return RiskConfig(mode=mode, eta_v=eta_v, eta_g=args.eta_g, xi=xi, eta_f=args.eta_f,
                      variance_model=args.variance_model, treatment=TREATMENTS[args.treatment])


def _risk_kw(args):
    kw = {"variance_model": args.variance_model}
    if args.eta_g is not None:
        kw["eta_g"] = args.eta_g
    if args.eta_f is not None:
        kw["eta_f"] = args.eta_f
    return kw


def _require_seed(args):
    if args.seed is None:
        raise UsageError("this command draws random numbers; pass --seed")
    return args.seed


def _fmt(v):
    if not np.isfinite(v):
        return "nan"
    text = f"{v:.6f}"
    return text[1:] if text == "-0.000000" else text


# ---------------------------------------------------------------- commands


def cmd_solve(args, solver):
    net = cio.load_network(args.case)
    mode = Mode(args.mode)
    samples = _samples(args, net, required=mode is not Mode.DETERMINISTIC)
    amb = AmbiguityModel.fit(samples, args.xi) if samples is not None else None
    cfg = _risk_config(args, mode, args.eta_v, args.xi)
    sol = solve_opf(net, mode, cfg, ambiguity=amb, include_flow_limits=args.flow_limits, solver=solver)
    out = _out_path(args, "solution.json")
    if sol.status != "Optimal":
        print(f"status: {sol.status}", file=sys.stderr)
        return EXIT_INFEASIBLE if sol.status == "Infeasible" else EXIT_SOLVER
    cio.write_solution(sol, net, out)
    print(f"case {net.case.name}  mode {mode.value}  status {sol.status}")
    print(f"{'generator':<12}{'bus':>6}{'p (MW)':>12}{'q (MVAr)':>12}{'alpha':>10}")
    for g, gp, gq, a in zip(net.generators, sol.g_p, sol.g_q, sol.alpha):
        base = net.case.base_mva
        print(f"{g.name or '-':<12}{g.bus!s:>6}{_fmt(gp * base):>12}{_fmt(gq * base):>12}{_fmt(a):>10}")
    print(f"expected cost ($/h): {_fmt(sol.objective)}")
    print(f"min voltage (p.u.): {_fmt(math.sqrt(np.min(sol.u)))}")
    print(f"solution written to {out}")
    return EXIT_OK


def cmd_evaluate(args, solver):
    net = cio.load_network(args.case)
    sol = cio.read_solution(args.solution, net)
    if sol.status != "Optimal":
        print(f"solution status is {sol.status}; nothing to evaluate", file=sys.stderr)
        return EXIT_USAGE
    samples = _samples(args, net)
    errors = np.stack([samples.eps_p, samples.eps_q], axis=2)
    rep = evaluate_dispatch(sol, net, errors)
    recs = cio.report_records(rep, sol.mode.value)
    out = _out_path(args, "evaluation.csv")
    out.write_text(cio.records_csv(recs), encoding="utf-8")
    lo, hi = rep.voltage_ci()
    print(f"voltage violation probability {rep.prob_voltage:.4f} (95% CI {lo:.4f}-{hi:.4f}) "
          f"over {rep.samples} samples; any violation {rep.prob_any:.4f}")
    print(f"report written to {out}")
    return EXIT_OK


def _grid(args, delta=(0.33, 0.66, 1.0)):
    try:
        return ExperimentGrid(eta_v=args.eta_v, xi=args.xi, delta=delta, samples=args.eval_samples,
                              seed=_require_seed(args))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_sweep(args, solver):
    net = cio.load_network(args.case)
    grid = _grid(args)
    samples = _samples(args, net)
    treatment = TREATMENTS[args.treatment]
    k = cio.parse_sample_spec(args.samples).get("k", args.k) if "=" in args.samples else args.k
    truth = ForecastErrorModel.from_loads(net.load_p, net.load_q, k, treatment)
    rows = in_sample_experiment(net, samples, grid, truth, treatment, _risk_kw(args), args.jobs, solver)
    out = _out_path(args, "sweep.csv")
    cio.write_results(rows, out)
    print(f"{len(rows)} rows written to {out}")
    return EXIT_OK


def cmd_oos(args, solver):
    net = cio.load_network(args.case)
    grid = _grid(args, args.delta)
    samples = _samples(args, net)
    rows = out_of_sample_experiment(net, samples, grid, TREATMENTS[args.treatment], _risk_kw(args), args.jobs,
                                    solver)
    out = _out_path(args, "oos.csv")
    cio.write_results(rows, out)
    print(f"{len(rows)} rows written to {out}")
    return EXIT_OK


def cmd_bench(args, solver):
    lines = ["case,buses,mode,status,iterations,best_s,median_s"]
    print(f"{'case':<12}{'buses':>6}{'mode':>15}{'status':>10}{'iters':>6}{'best s':>10}{'median s':>10}")
    for case in args.case:
        net = cio.load_network(case)
        args.treatment = "cpf"
        samples = _samples(args, net)
        for t in time_solves(net, samples, args.eta_v, args.xi, args.mode, args.repeats, solver=solver):
            print(f"{t.case:<12}{t.buses:>6}{t.mode:>15}{t.status:>10}{t.iterations:>6}"
                  f"{t.best:>10.4f}{t.median:>10.4f}")
            lines.append(f"{t.case},{t.buses},{t.mode},{t.status},{t.iterations},{t.best:.6f},{t.median:.6f}")
    if args.output:
        Path(args.output).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "evaluate": cmd_evaluate, "sweep": cmd_sweep, "oos": cmd_oos, "bench": cmd_bench}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(name)s: %(message)s")
    solver = SolverConfig(verbose=args.verbose, backend=getattr(args, "backend", None))
    try:
        return COMMANDS[args.command](args, solver)
    except (UsageError, cio.ParseError, cio.ValidationError, NetworkError, FileNotFoundError, ValueError) as exc:
        print(f"drcc-opf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        print(f"drcc-opf {args.command}: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
