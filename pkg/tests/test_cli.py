import csv
import json
import shutil
import subprocess

import pytest

from drcc_opf import cli
from drcc_opf import io as cio

SMALL = ["--eta-v", "0.05", "--xi", "0.05,0.005", "--eval-samples", "100"]


@pytest.fixture(autouse=True)
def out_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cio.OUTPUT_ENV, str(tmp_path))
    return tmp_path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_solve_example_writes_solution(out_env, capsys):
    code = cli.main(["solve", "--case", "cases/15bus", "--mode", "drcc", "--eta-v", "0.05", "--xi", "0.005",
                     "--samples", "N=100,seed=7"])
    assert code == 0
    d = json.loads((out_env / "solution.json").read_text())
    assert d["status"] == "Optimal" and d["mode"] == "drcc"
    assert abs(sum(g["alpha"] for g in d["generators"]) - 1.0) < 1e-9
    out = capsys.readouterr().out
    assert "expected cost" in out and "dg6" in out


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as ei:
        cli.main(["solve", "--case", "15bus", "--mode", "cc", "--bogus"])
    assert ei.value.code == 1
    assert "usage:" in capsys.readouterr().err


def test_missing_seed_is_usage_error(capsys):
    assert cli.main(["solve", "--case", "15bus", "--mode", "cc", "--samples", "N=100"]) == 1
    assert "seed" in capsys.readouterr().err
    assert cli.main(["sweep", "--case", "15bus", "--samples", "N=100,seed=1", *SMALL]) == 1


def test_missing_case_is_usage_error(capsys):
    assert cli.main(["solve", "--case", "nowhere", "--mode", "deterministic"]) == 1
    assert "nowhere" in capsys.readouterr().err


def test_infeasible_exit_code(tmp_path, capsys):
    text = cio.dump_case(cio.load_case("15bus"), "physical").replace("0.95, 1.05", "0.999, 1.05")
    p = tmp_path / "tight.case"
    p.write_text(text)
    assert cli.main(["solve", "--case", str(p), "--mode", "deterministic"]) == 2
    assert "Infeasible" in capsys.readouterr().err


def test_solver_failure_exit_code(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("factorization broke down")

    monkeypatch.setattr(cli, "solve_opf", boom)
    assert cli.main(["solve", "--case", "15bus", "--mode", "deterministic"]) == 3


def test_evaluate_round_trip(out_env):
    assert cli.main(["solve", "--case", "15bus", "--mode", "cc", "--samples", "N=100,seed=7"]) == 0
    assert cli.main(["evaluate", "--case", "15bus", "--solution", str(out_env / "solution.json"),
                     "--samples", "N=500", "--seed", "3"]) == 0
    rows = read_csv(out_env / "evaluation.csv")
    metrics = {r["metric"]: r for r in rows}
    assert set(metrics) == {"samples", "violation_prob", "any_violation_prob", "mean_cost"}
    v = metrics["violation_prob"]
    assert float(v["ci_low"]) <= float(v["value"]) <= float(v["ci_high"])


def test_evaluate_reads_samples_csv(out_env, net15, samples15):
    assert cli.main(["solve", "--case", "15bus", "--mode", "deterministic"]) == 0
    cio.write_samples(samples15, net15, out_env / "s.csv")
    assert cli.main(["evaluate", "--case", "15bus", "--solution", str(out_env / "solution.json"),
                     "--samples", str(out_env / "s.csv"), "--output", str(out_env / "e.csv")]) == 0
    assert (out_env / "e.csv").exists()


def test_sweep_row_arithmetic(out_env):
    args = ["sweep", "--case", "15bus", "--samples", "N=100", "--seed", "7", "--eval-samples", "50"]
    assert cli.main(args) == 0
    rows = read_csv(out_env / "sweep.csv")
    keys = {(r["mode"], r["eta_v"], r["xi"]) for r in rows if r["metric"] == "violation_prob"}
    # three modes at each of the 4 x 3 grid points
    assert len(keys) == 3 * 12
    assert {r["mode"] for r in rows} == {"deterministic", "cc", "drcc"}


def test_byte_identical_reruns(tmp_path):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    base = ["oos", "--case", "15bus", "--samples", "N=100", "--seed", "4", *SMALL, "--delta", "0,1"]
    assert cli.main([*base, "--output", str(a)]) == 0
    assert cli.main([*base, "--output", str(b)]) == 0
    assert cli.main([*base, "--output", str(c), "--jobs", "2"]) == 0
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()
    rows = read_csv(a)
    assert {r["delta"] for r in rows} == {"0.0", "1.0"}
    assert list(rows[0]) == list(cio.RESULTS_HEADER)


def test_bad_grid_is_usage_error():
    assert cli.main(["oos", "--case", "15bus", "--samples", "N=100", "--seed", "1", "--delta", "2"]) == 1
    with pytest.raises(SystemExit) as ei:
        cli.main(["oos", "--case", "15bus", "--seed", "1", "--samples", "N=100", "--xi", "a,b"])
    assert ei.value.code == 1


def test_bench(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert cli.main(["bench", "--case", "15bus", "feeder37", "--seed", "1", "--repeats", "1",
                     "--mode", "cc", "drcc", "--output", str(out)]) == 0
    rows = read_csv(out)
    assert [(r["case"], r["mode"]) for r in rows] == [
        ("15bus", "cc"), ("15bus", "drcc"), ("feeder37", "cc"), ("feeder37", "drcc")]
    assert all(r["status"] == "Optimal" for r in rows)


@pytest.mark.skipif(shutil.which("drcc-opf") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["drcc-opf", "solve", "--case", "15bus", "--mode", "deterministic",
                          "--output", str(tmp_path / "s.json")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    res = subprocess.run(["drcc-opf", "frobnicate"], capture_output=True, text=True)
    assert res.returncode == 1 and "usage" in res.stderr
