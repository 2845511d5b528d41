import hashlib
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drcc_opf import io as cio
from drcc_opf.feeders import synthetic_case
from drcc_opf.formulation import Mode, solve_opf
from drcc_opf.network import validate_radial
from drcc_opf.uncertainty import ErrorTreatment, SampleSet

from conftest import random_tree_case

GOOD = """\
# comment line
[case]
name = tiny
units = physical
base_mva = 10
base_kv = 4

[buses]
id, v_min, v_max, load_p, load_q
0, 0.95, 1.05, 0, 0
1, 0.9, 1.1, 5.0, 2.0   # MW, MVAr

[lines]
id, from, to, r, x, s_max
0, 0, 1, 0.8, 1.6, inf

[generators]
name, bus, p_min, p_max, q_max, c2, c1, c0
sub, 0, 0, 20, 10, 1.0, 10.0, 3.0
"""


def test_physical_units_converted():
    case = cio.parse_case(GOOD)
    b = case.buses[1]
    assert b.load_p == pytest.approx(0.5, abs=1e-12)
    assert b.load_q == pytest.approx(0.2, abs=1e-12)
    assert b.u_min == pytest.approx(0.81, abs=1e-12) and b.u_max == pytest.approx(1.21, abs=1e-12)
    # z_base = 4^2 / 10 = 1.6 ohm
    assert case.lines[0].r == pytest.approx(0.5, abs=1e-12)
    assert case.lines[0].x == pytest.approx(1.0, abs=1e-12)
    g = case.generators[0]
    assert (g.p_max, g.q_max) == pytest.approx((2.0, 1.0), abs=1e-12)
    # $/MWh -> $/p.u.h
    assert (g.c2, g.c1, g.c0) == pytest.approx((100.0, 100.0, 3.0), abs=1e-9)
    assert case.name == "tiny"


def test_bundled_15bus_units():
    case = cio.load_case("15bus")
    assert case.lines[0].r == pytest.approx(1.35309 / 121.0, rel=1e-12)
    assert case.buses[1].load_p == pytest.approx(0.0882, rel=1e-12)


@pytest.mark.parametrize("text,line,fragment", [
    (GOOD.replace("1, 0.9, 1.1", "0, 0.9, 1.1"), 11, "duplicate bus"),
    (GOOD.replace("0, 0, 1, 0.8", "0, 0, 7, 0.8"), 15, "unknown bus"),
    (GOOD.replace("5.0, 2.0", "five, 2.0"), 11, "not a number"),
    (GOOD.replace("5.0, 2.0", "nan, 2.0"), 11, "NaN"),
    (GOOD.replace("id, from, to", "id, to, from"), 14, "header"),
    (GOOD.replace("[lines]", "[wires]"), 13, "unknown section"),
    (GOOD.replace("sub, 0, 0, 20", "sub, 9, 0, 20"), 19, "unknown bus"),
    (GOOD.replace("0, 0, 1, 0.8, 1.6, inf", "0, 0, 1, 0.8, 1.6"), 15, "fields"),
    (GOOD.replace("units = physical", "units = imperial"), 4, "units"),
    ("1, 2, 3\n", 1, "before the first section"),
])
def test_parse_errors(text, line, fragment):
    with pytest.raises(cio.ParseError) as ei:
        cio.parse_case(text)
    assert ei.value.line == line
    assert fragment in ei.value.reason


def test_invalid_topology_is_validation_error(tmp_path):
    text = GOOD.replace("[generators]", "[generators]").replace(
        "0, 0, 1, 0.8, 1.6, inf", "0, 0, 1, 0.8, 1.6, inf\n1, 1, 0, 0.8, 1.6, inf")
    p = tmp_path / "loop.case"
    p.write_text(text)
    with pytest.raises(cio.ValidationError):
        cio.load_case(p)


def test_missing_case_file():
    with pytest.raises(FileNotFoundError):
        cio.resolve_case_path("no-such-case")
    assert cio.resolve_case_path("cases/15bus") == cio.resolve_case_path("15bus")


def _case_arrays(case):
    net = validate_radial(case)
    return [net.r, net.x, net.u_min, net.u_max, net.load_p, net.load_q, net.gen_bus,
            *(net.gen_array(k) for k in ("p_min", "p_max", "q_max", "c2", "c1", "c0"))]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 30))
def test_pu_round_trip_exact(tmp_path_factory, seed, n):
    case = random_tree_case(np.random.default_rng(seed), n)
    p = tmp_path_factory.mktemp("rt") / "c.case"
    cio.save_case(case, p, "pu")
    back = cio.load_case(p)
    # voltage limits are stored as magnitudes, so u = v^2 comes back to within an ulp
    assert [(b.id, b.load_p, b.load_q) for b in back.buses] == [(b.id, b.load_p, b.load_q) for b in case.buses]
    for a, b in zip(back.buses, case.buses):
        assert (a.u_min, a.u_max) == pytest.approx((b.u_min, b.u_max), rel=1e-15)
    assert [(l.from_bus, l.to_bus, l.r, l.x, l.s_max) for l in back.lines] == \
        [(l.from_bus, l.to_bus, l.r, l.x, l.s_max) for l in case.lines]
    assert [g[:-1] for g in map(_gen_tuple, back.generators)] == [g[:-1] for g in map(_gen_tuple, case.generators)]


def _gen_tuple(g):
    return (g.bus, g.p_min, g.p_max, g.q_max, g.c2, g.c1, g.c0, g.name)


@pytest.mark.parametrize("name", ["15bus", "feeder37", "feeder123"])
def test_physical_round_trip(name):
    case = cio.load_case(name)
    back = cio.parse_case(cio.dump_case(case, "physical"))
    for a, b in zip(_case_arrays(case), _case_arrays(back)):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-15)


def test_bundled_counts_match_manifest():
    manifest = json.loads((cio.CASE_DIR / "manifest.json").read_text())
    for name, entry in manifest.items():
        net = cio.load_network(name)
        assert (net.n_bus, net.n_line) == (entry["buses"], entry["lines"])
        assert [g.bus for g in net.generators] == entry["generators"]
        assert entry["sha256"] == hashlib.sha256((cio.CASE_DIR / entry["file"]).read_bytes()).hexdigest()
    net = cio.load_network("15bus")
    assert (net.n_bus, net.n_line, net.n_gen) == (15, 14, 3)
    assert [g.bus for g in net.generators] == [0, 6, 11]


@pytest.mark.parametrize("name", ["feeder37", "feeder123"])
def test_bundled_feeders_match_generator(name):
    _, case = synthetic_case(name)
    for a, b in zip(_case_arrays(case), _case_arrays(cio.load_case(name))):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-15)


def test_bundled_feeders_sit_near_voltage_floor():
    from drcc_opf.network import lindistflow_state

    for name in ("feeder37", "feeder123"):
        net = cio.load_network(name)
        s = lindistflow_state(net, net.load_p, net.load_q)
        assert math.sqrt(s.u.min()) == pytest.approx(0.955, abs=1e-3)


def test_synth_samples(net15):
    z = cio.synth_samples(net15, 0.0, 10, 1)
    assert not z.eps_p.any() and not z.eps_q.any()
    s = cio.synth_samples(net15, 0.2, 2000, 5)
    loaded = net15.load_p > 0
    ratio = s.eps_p[:, loaded].std(axis=0) / net15.load_p[loaded]
    assert np.all((ratio > 0.14) & (ratio < 0.26))
    tan_phi = net15.load_q[loaded] / net15.load_p[loaded]
    np.testing.assert_allclose(s.eps_q[:, loaded], s.eps_p[:, loaded] * tan_phi, rtol=1e-12)
    assert np.array_equal(cio.synth_samples(net15, 0.2, 50, 5).eps_p, s.eps_p[:50])
    with pytest.raises(ValueError):
        cio.synth_samples(net15, -0.1, 10, 1)


def test_samples_round_trip(tmp_path, net15, samples15):
    p = tmp_path / "s.csv"
    cio.write_samples(samples15, net15, p)
    back = cio.read_samples(p, net15)
    assert np.array_equal(back.eps_p, samples15.eps_p)
    assert np.array_equal(back.eps_q, samples15.eps_q)


def test_samples_p_only_file(tmp_path, net15, samples15):
    p = tmp_path / "s.csv"
    lines = [",".join(map(str, net15.ids))] + [",".join(repr(float(v)) for v in row) for row in samples15.eps_p]
    p.write_text("\n".join(lines) + "\n")
    back = cio.read_samples(p, net15)
    np.testing.assert_allclose(back.eps_q, samples15.eps_q, rtol=1e-12, atol=1e-15)
    with pytest.raises(cio.ParseError):
        cio.read_samples(p, net15, ErrorTreatment.INDEPENDENT_PQ)
    p.write_text("block,0,99\nP,1,2\n")
    with pytest.raises(cio.ParseError):
        cio.read_samples(p, net15)


def test_parse_sample_spec():
    assert cio.parse_sample_spec("N=100,seed=7") == {"n": 100, "seed": 7}
    assert cio.parse_sample_spec("n=5, seed=1, k=0.3") == {"n": 5, "seed": 1, "k": 0.3}
    for bad in ("seed=7", "N=10,foo=1", "N=ten", "N"):
        with pytest.raises(ValueError):
            cio.parse_sample_spec(bad)


def test_solution_round_trip(tmp_path, net15):
    sol = solve_opf(net15, Mode.DETERMINISTIC)
    p = tmp_path / "sol.json"
    cio.write_solution(sol, net15, p)
    back = cio.read_solution(p, net15)
    for k in ("g_p", "g_q", "alpha", "f_p", "f_q", "u"):
        assert np.array_equal(getattr(back, k), getattr(sol, k))
    assert back.objective == sol.objective and back.mode is sol.mode and back.status == sol.status


def test_results_csv_layout(net15, samples15):
    from drcc_opf.evaluation import ExperimentGrid, out_of_sample_experiment

    rows = out_of_sample_experiment(net15, samples15, ExperimentGrid((0.05,), (0.05,), (0.5,), samples=50, seed=1))
    text = cio.results_csv(rows)
    lines = text.splitlines()
    assert lines[0] == ",".join(cio.RESULTS_HEADER)
    metrics = {l.split(",")[4] for l in lines[1:]}
    assert {"solved", "violation_prob", "expected_cost", "relative_cost", "realized_cost"} <= metrics
    assert len(lines) - 1 == len(cio.result_records(rows))
    assert all(l.count(",") == 7 for l in lines)
