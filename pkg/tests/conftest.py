import numpy as np
import pytest

from drcc_opf import io as cio
from drcc_opf.network import Bus, Generator, Line, NetworkCase, validate_radial


def random_tree_case(rng, n, load_scale=0.05, zero_impedance=0.0):
    """Random radial case with buses 0..n-1, parent(i) < i, root generator."""
    buses = [Bus(0)]
    lines = []
    for i in range(1, n):
        buses.append(Bus(i, 0.81, 1.21, float(rng.uniform(0, load_scale)), float(rng.uniform(0, load_scale / 2))))
        if rng.random() < zero_impedance:
            r = x = 0.0
        else:
            r, x = float(rng.uniform(1e-3, 0.05)), float(rng.uniform(1e-3, 0.05))
        lines.append(Line(int(rng.integers(0, i)), i, r, x))
    return NetworkCase(buses, lines, [Generator(0, 0.0, 100.0, 100.0, 1.0, 10.0)])


def chain_case(n, r=0.01, x=0.02, loads=None):
    loads = loads or {}
    buses = [Bus(i, 0.81, 1.21, *loads.get(i, (0.0, 0.0))) for i in range(n)]
    lines = [Line(i - 1, i, r, x) for i in range(1, n)]
    return NetworkCase(buses, lines, [Generator(0, 0.0, 100.0, 100.0, 1.0, 10.0)])


@pytest.fixture(scope="session")
def net15():
    return cio.load_network("15bus")


@pytest.fixture(scope="session")
def samples15(net15):
    return cio.synth_samples(net15, 0.2, 100, 7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["random_tree_case", "chain_case", "validate_radial"]


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if not mod or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
