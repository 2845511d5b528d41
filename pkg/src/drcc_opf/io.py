"""Case files, sample CSVs, solution files and result tables.

Case file format (UTF-8 text, ``#`` starts a comment)::

    [case]
    name = 15bus
    units = physical        # or "pu"
    base_mva = 1.0
    base_kv = 11.0

    [buses]
    id, v_min, v_max, load_p, load_q
    0, 0.95, 1.05, 0, 0
    ...

    [lines]
    id, from, to, r, x, s_max
    ...

    [generators]
    name, bus, p_min, p_max, q_max, c2, c1, c0
    ...

Voltage limits are magnitudes in p.u. (squared on load). With
``units = physical`` powers are MW/MVAr/MVA, impedances ohm and costs $/MWh
(c1), $/MW^2h (c2), $/h (c0); they are converted with ``base_mva`` and
``base_kv``. ``units = pu`` stores the per-unit model directly and is what
:func:`save_case` writes, so saving and loading is exact.
"""

import csv
import io as _io
import json
import math
import os
from pathlib import Path

import numpy as np

from .network import Bus, Generator, Line, NetworkCase, NetworkError, ValidatedNetwork, validate_radial
from .uncertainty import ErrorTreatment, ForecastErrorModel, SampleSet, draw_errors

CASE_DIR = Path(__file__).parent / "cases"
OUTPUT_ENV = "DRCC_OPF_OUTPUT_DIR"
RESULTS_SCHEMA_VERSION = 1
RESULTS_HEADER = ("mode", "eta_v", "xi", "delta", "metric", "value", "ci_low", "ci_high")

_SECTIONS = {
    "buses": ("id", "v_min", "v_max", "load_p", "load_q"),
    "lines": ("id", "from", "to", "r", "x", "s_max"),
    "generators": ("name", "bus", "p_min", "p_max", "q_max", "c2", "c1", "c0"),
}


class ParseError(ValueError):
    def __init__(self, line, reason):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class ValidationError(ValueError):
    """A well-formed case that is not a valid radial feeder."""


def output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "."))


# ---------------------------------------------------------------- case files


def _parse_id(tok):
    try:
        return int(tok)
    except ValueError:
        return tok


def _parse_float(tok, lineno, what):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(lineno, f"{what}: {tok!r} is not a number") from None
    if math.isnan(v):
        raise ParseError(lineno, f"{what} is NaN")
    return v


def parse_case(text: str, source: str = "<string>") -> NetworkCase:
    header = {}
    tables = {k: [] for k in _SECTIONS}
    section = None
    columns = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(lineno, f"malformed section header {raw.strip()!r}")
            section = line[1:-1].strip().lower()
            if section != "case" and section not in _SECTIONS:
                raise ParseError(lineno, f"unknown section [{section}]")
            columns = None
            continue
        if section is None:
            raise ParseError(lineno, "content before the first section")
        if section == "case":
            if "=" not in line:
                raise ParseError(lineno, "expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            header[key.lower()] = (val, lineno)
            continue
        cells = [c.strip() for c in line.split(",")]
        if columns is None:
            want = _SECTIONS[section]
            if tuple(c.lower() for c in cells) != want:
                raise ParseError(lineno, f"[{section}] header must be {', '.join(want)}")
            columns = want
            continue
        if len(cells) != len(columns):
            raise ParseError(lineno, f"expected {len(columns)} fields, got {len(cells)}")
        tables[section].append((lineno, cells))

    units = header.get("units", ("physical", 0))[0].lower()
    if units not in ("physical", "pu"):
        raise ParseError(header["units"][1], f"units must be 'physical' or 'pu', got {units!r}")
    base_mva = _parse_float(*header.get("base_mva", ("1.0", 0)), "base_mva")
    base_kv = _parse_float(*header.get("base_kv", ("1.0", 0)), "base_kv")
    if base_mva <= 0 or base_kv <= 0:
        raise ParseError(header.get("base_mva", ("", 0))[1], "bases must be positive")
    name = header.get("name", (Path(source).stem, 0))[0]

    phys = units == "physical"
    s_scale = 1.0 / base_mva if phys else 1.0
    z_scale = base_mva / base_kv**2 if phys else 1.0

    buses, seen = [], set()
    for lineno, (bid, vmin, vmax, lp, lq) in tables["buses"]:
        bid = _parse_id(bid)
        if bid in seen:
            raise ParseError(lineno, f"duplicate bus id {bid!r}")
        seen.add(bid)
        vmin = _parse_float(vmin, lineno, "v_min")
        vmax = _parse_float(vmax, lineno, "v_max")
        try:
            buses.append(Bus(bid, vmin**2, vmax**2,
                             _parse_float(lp, lineno, "load_p") * s_scale,
                             _parse_float(lq, lineno, "load_q") * s_scale))
        except NetworkError as exc:
            raise ParseError(lineno, str(exc)) from None
    if not buses:
        raise ParseError(0, "no [buses] rows")

    lines, line_ids = [], set()
    for lineno, (lid, fb, tb, r, x, smax) in tables["lines"]:
        lid = _parse_id(lid)
        if lid in line_ids:
            raise ParseError(lineno, f"duplicate line id {lid!r}")
        line_ids.add(lid)
        fb, tb = _parse_id(fb), _parse_id(tb)
        for end in (fb, tb):
            if end not in seen:
                raise ParseError(lineno, f"line {lid!r} references unknown bus {end!r}")
        try:
            lines.append(Line(fb, tb, _parse_float(r, lineno, "r") * z_scale,
                              _parse_float(x, lineno, "x") * z_scale,
                              _parse_float(smax, lineno, "s_max") * s_scale, lid))
        except NetworkError as exc:
            raise ParseError(lineno, str(exc)) from None

    gens = []
    for lineno, (gname, bus, pmin, pmax, qmax, c2, c1, c0) in tables["generators"]:
        bus = _parse_id(bus)
        if bus not in seen:
            raise ParseError(lineno, f"generator {gname!r} at unknown bus {bus!r}")
        # cost per p.u.: c1 $/MWh * MVA base, c2 $/MW^2h * base^2
        c_scale = base_mva if phys else 1.0
        try:
            gens.append(Generator(
                bus,
                _parse_float(pmin, lineno, "p_min") * s_scale,
                _parse_float(pmax, lineno, "p_max") * s_scale,
                _parse_float(qmax, lineno, "q_max") * s_scale,
                _parse_float(c2, lineno, "c2") * c_scale**2,
                _parse_float(c1, lineno, "c1") * c_scale,
                _parse_float(c0, lineno, "c0"),
                gname,
            ))
        except NetworkError as exc:
            raise ParseError(lineno, str(exc)) from None

    return NetworkCase(buses, lines, gens, base_mva, base_kv, name, {"units": units, "source": source})


def resolve_case_path(path) -> Path:
    """A file path, or the name of a bundled case (``15bus``, ``cases/15bus``)."""
    p = Path(path)
    if p.is_file():
        return p
    for cand in (CASE_DIR / p.name, CASE_DIR / f"{p.name}.case"):
        if cand.is_file():
            return cand
    raise FileNotFoundError(f"no case file or bundled case named {str(path)!r}")


def load_case(path) -> NetworkCase:
    p = resolve_case_path(path)
    case = parse_case(p.read_text(encoding="utf-8"), str(p))
    try:
        validate_radial(case)
    except NetworkError as exc:
        raise ValidationError(f"{p}: {exc}") from exc
    return case


def load_network(path) -> ValidatedNetwork:
    return validate_radial(load_case(path))


def _fmt(v, digits=None):
    if isinstance(v, float):
        if v == math.inf:
            return "inf"
        # physical values are products with the bases; trim the rounding noise
        return repr(float(f"{v:.{digits}g}")) if digits else repr(v)
    return str(v)


def dump_case(case: NetworkCase, units: str = "pu") -> str:
    """Case file text; ``units="pu"`` round-trips exactly apart from the voltage limits (stored as magnitudes)."""
    if units not in ("pu", "physical"):
        raise ValueError("units must be 'pu' or 'physical'")
    phys = units == "physical"
    d = 12 if phys else None
    s = case.base_mva if phys else 1.0
    z = case.base_kv**2 / case.base_mva if phys else 1.0
    out = [
        "[case]",
        f"name = {case.name}",
        f"units = {units}",
        f"base_mva = {_fmt(float(case.base_mva))}",
        f"base_kv = {_fmt(float(case.base_kv))}",
        "",
        "[buses]",
        ", ".join(_SECTIONS["buses"]),
    ]
    for b in case.buses:
        out.append(", ".join(_fmt(v, d) for v in (
            b.id, math.sqrt(b.u_min), math.sqrt(b.u_max), float(b.load_p) * s, float(b.load_q) * s)))
    out += ["", "[lines]", ", ".join(_SECTIONS["lines"])]
    for k, ln in enumerate(case.lines):
        lid = ln.id if ln.id is not None else k
        out.append(", ".join(_fmt(v, d) for v in (
            lid, ln.from_bus, ln.to_bus, float(ln.r) * z, float(ln.x) * z, float(ln.s_max) * s)))
    out += ["", "[generators]", ", ".join(_SECTIONS["generators"])]
    for k, g in enumerate(case.generators):
        out.append(", ".join(_fmt(v, d) for v in (
            g.name or f"g{k}", g.bus, float(g.p_min) * s, float(g.p_max) * s, float(g.q_max) * s,
            float(g.c2) / s**2, float(g.c1) / s, float(g.c0))))
    return "\n".join(out) + "\n"


def save_case(case: NetworkCase, path, units: str = "pu") -> None:
    Path(path).write_text(dump_case(case, units), encoding="utf-8")


# ---------------------------------------------------------------- samples


def synth_samples(net: ValidatedNetwork, k: float, n: int, seed: int) -> SampleSet:
    """``n`` draws of sigma = k |d_p| errors with reactive errors at the bus power factor."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    model = ForecastErrorModel.from_loads(net.load_p, net.load_q, k)
    return SampleSet.from_tensor(draw_errors(model, ErrorTreatment.CONSTANT_POWER_FACTOR, n, seed))


def write_samples(samples: SampleSet, net: ValidatedNetwork, path) -> None:
    """Two blocks: rows tagged P then Q, one column per bus (external ids)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", *map(str, net.ids)])
        for tag, block in (("P", samples.eps_p), ("Q", samples.eps_q)):
            for row in block:
                w.writerow([tag, *map(repr, map(float, row))])


def read_samples(path, net: ValidatedNetwork, treatment=ErrorTreatment.CONSTANT_POWER_FACTOR) -> SampleSet:
    """Read a samples CSV; columns are matched to buses by id.

    Without a ``block`` column the rows are active-power errors and reactive
    errors follow the bus power factor (constant power factor treatment only).
    Buses missing from the file get zero error.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(1, "empty samples file")
    head = [h.strip() for h in rows[0]]
    blocked = head[0].lower() == "block"
    ids = head[1:] if blocked else head
    by_str = {str(b): i for i, b in enumerate(net.ids)}
    cols = []
    for h in ids:
        if h not in by_str:
            raise ParseError(1, f"unknown bus id {h!r} in samples header")
        cols.append(by_str[h])
    blocks = {"P": [], "Q": []}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        tag = row[0].strip().upper() if blocked else "P"
        vals = row[1:] if blocked else row
        if tag not in blocks:
            raise ParseError(lineno, f"block must be P or Q, got {tag!r}")
        if len(vals) != len(cols):
            raise ParseError(lineno, f"expected {len(cols)} values, got {len(vals)}")
        full = np.zeros(net.n_bus)
        full[cols] = [_parse_float(v, lineno, "sample") for v in vals]
        blocks[tag].append(full)
    ep = np.array(blocks["P"])
    if blocks["Q"]:
        eq = np.array(blocks["Q"])
        if eq.shape != ep.shape:
            raise ParseError(len(rows), "P and Q blocks have different row counts")
    elif treatment is ErrorTreatment.CONSTANT_POWER_FACTOR:
        tan_phi = np.divide(net.load_q, net.load_p, out=np.zeros(net.n_bus), where=net.load_p != 0)
        eq = ep * tan_phi
    else:
        raise ParseError(1, "independent treatment needs a Q block")
    return SampleSet(ep, eq)


def parse_sample_spec(spec: str) -> dict:
    """``N=100,seed=7[,k=0.2]`` -> dict; raises ValueError on anything else."""
    out = {}
    for part in spec.split(","):
        if "=" not in part:
            raise ValueError(f"bad sample spec item {part!r}")
        key, val = (s.strip() for s in part.split("=", 1))
        key = key.lower()
        if key == "n":
            out["n"] = int(val)
        elif key == "seed":
            out["seed"] = int(val)
        elif key == "k":
            out["k"] = float(val)
        else:
            raise ValueError(f"unknown sample spec key {key!r}")
    if "n" not in out:
        raise ValueError("sample spec needs N=")
    return out


# ---------------------------------------------------------------- solutions


def solution_to_dict(sol, net: ValidatedNetwork) -> dict:
    def arr(a):
        return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]

    return {
        "case": net.case.name,
        "mode": sol.mode.value,
        "status": sol.status,
        "objective": None if not np.isfinite(sol.objective) else float(sol.objective),
        "total_var_p": float(sol.total_var_p),
        "total_var_q": float(sol.total_var_q),
        "generators": [
            {"name": g.name, "bus": g.bus, "g_p": gp, "g_q": gq, "alpha": a}
            for g, gp, gq, a in zip(net.generators, arr(sol.g_p), arr(sol.g_q), arr(sol.alpha))
        ],
        "buses": [{"id": b, "u": u} for b, u in zip(net.ids, arr(sol.u))],
        "lines": [
            {"to": b, "f_p": fp, "f_q": fq}
            for b, fp, fq in zip(net.ids[1:], arr(sol.f_p), arr(sol.f_q))
        ],
    }


def write_solution(sol, net: ValidatedNetwork, path) -> None:
    Path(path).write_text(json.dumps(solution_to_dict(sol, net), indent=2) + "\n", encoding="utf-8")


def read_solution(path, net: ValidatedNetwork):
    from .formulation import DispatchSolution, Mode

    d = json.loads(Path(path).read_text(encoding="utf-8"))

    def arr(vals):
        return np.array([np.nan if v is None else v for v in vals], dtype=float)

    gens = d["generators"]
    if len(gens) != net.n_gen:
        raise ValueError("solution does not match the case's generators")
    u_by_id = {str(b["id"]): b["u"] for b in d["buses"]}
    flows = {str(ln["to"]): ln for ln in d["lines"]}
    try:
        u = arr([u_by_id[str(b)] for b in net.ids])
        f_p = arr([flows[str(b)]["f_p"] for b in net.ids[1:]])
        f_q = arr([flows[str(b)]["f_q"] for b in net.ids[1:]])
    except KeyError as exc:
        raise ValueError(f"solution lacks bus {exc.args[0]!r}") from None
    return DispatchSolution(
        arr([g["g_p"] for g in gens]), arr([g["g_q"] for g in gens]), arr([g["alpha"] for g in gens]),
        f_p, f_q, u, math.nan if d["objective"] is None else d["objective"], d["status"],
        Mode(d["mode"]), d.get("total_var_p", 0.0), d.get("total_var_q", 0.0), {}, net,
    )


# ---------------------------------------------------------------- results


def result_records(rows):
    """Long-format records ``(mode, eta_v, xi, delta, metric, value, ci_low, ci_high)``."""
    out = []
    for r in rows:
        key = (r.mode, r.eta_v, r.xi, r.delta)
        out.append((*key, "solved", 1.0 if r.status == "Optimal" else 0.0, math.nan, math.nan))
        out.append((*key, "violation_prob", r.violation, r.ci_low, r.ci_high))
        for metric in ("expected_cost", "relative_cost", "realized_cost"):
            out.append((*key, metric, getattr(r, metric), math.nan, math.nan))
        for metric, val in sorted(r.extra.items()):
            if isinstance(val, (bool, np.bool_)):
                val = float(val)
            out.append((*key, metric, val, math.nan, math.nan))
    return out


def _cell(v):
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def results_csv(rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULTS_HEADER)
    for rec in result_records(rows):
        w.writerow([_cell(v) for v in rec])
    return buf.getvalue()


def write_results(rows, path) -> None:
    Path(path).write_text(results_csv(rows), encoding="utf-8")


def report_records(report, mode, eta_v=math.nan, xi=math.nan, delta=math.nan):
    """Records for one :class:`evaluation.ViolationReport` (the ``evaluate`` command)."""
    key = (mode, eta_v, xi, delta)
    lo, hi = report.voltage_ci()
    recs = [
        (*key, "samples", float(report.samples), math.nan, math.nan),
        (*key, "violation_prob", report.prob_voltage, lo, hi),
        (*key, "any_violation_prob", report.prob_any, math.nan, math.nan),
        (*key, "mean_cost", report.mean_cost, math.nan, math.nan),
    ]
    return recs


def records_csv(records) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULTS_HEADER)
    for rec in records:
        w.writerow([_cell(v) for v in rec])
    return buf.getvalue()
