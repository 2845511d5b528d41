"""Synthetic multiphase feeders and their balanced single-phase reduction.

The bundled 37- and 123-bus cases are stand-ins with the bus counts and
voltage classes of the IEEE test feeders, generated here from a fixed seed.

Generation (:func:`multiphase_feeder`):

* a trunk of three-phase lines from the substation, with laterals attached to
  random earlier buses; a lateral's phases are a subset of its parent's;
* each line gets a length and one of a few overhead configurations, given as
  3x3 series impedance matrices in ohm/km (phases a, b, c);
* each bus carries a spot load on a random subset of its phases.

Reduction (:func:`reduce_feeder`):

* lines with two or three phases use the balanced positive-sequence
  impedance ``z1 = mean(self) - mean(mutual)`` over the phases present;
  single-phase lines use their self impedance;
* loads are summed over phases;
* line impedances are finally scaled by one common factor so the no-DG
  voltage profile bottoms out at a target magnitude, which keeps the
  reduced case in the same operating regime as the 15-bus case.
"""

from dataclasses import dataclass

import numpy as np

from .network import Bus, Generator, Line, NetworkCase, lindistflow_state, validate_radial

PHASES = ("a", "b", "c")

# ohm/km; typical overhead spacings with a neutral eliminated by Kron reduction
CONFIGURATIONS = {
    "OH1": np.array([
        [0.2153 + 0.6325j, 0.0969 + 0.3117j, 0.0982 + 0.2632j],
        [0.0969 + 0.3117j, 0.2097 + 0.6511j, 0.0954 + 0.2392j],
        [0.0982 + 0.2632j, 0.0954 + 0.2392j, 0.2121 + 0.6430j],
    ]),
    "OH2": np.array([
        [0.2926 + 0.6783j, 0.0978 + 0.3113j, 0.0992 + 0.2628j],
        [0.0978 + 0.3113j, 0.2870 + 0.6968j, 0.0964 + 0.2389j],
        [0.0992 + 0.2628j, 0.0964 + 0.2389j, 0.2895 + 0.6888j],
    ]),
    "OH3": np.array([
        [0.8180 + 0.8225j, 0.1000 + 0.3028j, 0.1015 + 0.2545j],
        [0.1000 + 0.3028j, 0.8124 + 0.8410j, 0.0986 + 0.2305j],
        [0.1015 + 0.2545j, 0.0986 + 0.2305j, 0.8149 + 0.8330j],
    ]),
}


@dataclass(frozen=True)
class PhaseLine:
    from_bus: int
    to_bus: int
    phases: tuple
    length_km: float
    config: str

    def z_matrix(self):
        """Series impedance (ohm) restricted to the phases present."""
        idx = [PHASES.index(p) for p in self.phases]
        return CONFIGURATIONS[self.config][np.ix_(idx, idx)] * self.length_km


@dataclass(frozen=True)
class MultiphaseFeeder:
    name: str
    base_kv: float
    lines: tuple
    loads: dict  # bus -> {phase: (kW, kVAr)}
    n_bus: int


def multiphase_feeder(n_bus, seed, name, base_kv, total_kw, trunk_fraction=0.3):
    rng = np.random.default_rng(seed)
    n_trunk = max(2, int(round(trunk_fraction * n_bus)))
    phases = {0: PHASES}
    lines = []
    for b in range(1, n_bus):
        if b < n_trunk:
            parent = b - 1
            ph = PHASES
            config = "OH1"
        else:
            parent = int(rng.integers(0, b))
            pp = phases[parent]
            k = int(rng.choice([1, 2, 3], p=[0.5, 0.2, 0.3]))
            k = min(k, len(pp))
            ph = tuple(sorted(rng.choice(pp, size=k, replace=False).tolist()))
            config = "OH2" if k > 1 else "OH3"
        phases[b] = ph
        length = float(rng.uniform(0.05, 0.4))
        lines.append(PhaseLine(parent, b, ph, round(length, 4), config))
    loads = {}
    for b in range(1, n_bus):
        if rng.random() < 0.25:
            continue
        ph = phases[b]
        k = int(rng.integers(1, len(ph) + 1))
        chosen = rng.choice(ph, size=k, replace=False).tolist()
        loads[b] = {p: (float(rng.choice([20.0, 40.0, 75.0, 85.0])), 0.0) for p in sorted(chosen)}
    total = sum(kw for d in loads.values() for kw, _ in d.values())
    scale = total_kw / total
    for b, d in loads.items():
        for p, (kw, _) in d.items():
            pf = float(rng.uniform(0.85, 0.95))
            kw = round(kw * scale, 3)
            d[p] = (kw, round(kw * np.tan(np.arccos(pf)), 3))
    return MultiphaseFeeder(name, base_kv, tuple(lines), loads, n_bus)


def positive_sequence(z):
    """Per-phase equivalent impedance of a (possibly partial) phase matrix."""
    k = z.shape[0]
    self_mean = np.trace(z) / k
    if k == 1:
        return self_mean
    mutual_mean = (z.sum() - np.trace(z)) / (k * (k - 1))
    return self_mean - mutual_mean


def reduce_feeder(feeder: MultiphaseFeeder, dg_buses, dg_fraction=0.15, v_target=0.955,
                  v_min=0.95, v_max=1.05, base_mva=1.0):
    """Balanced single-phase per-unit :class:`NetworkCase`."""
    p = np.zeros(feeder.n_bus)
    q = np.zeros(feeder.n_bus)
    for b, d in feeder.loads.items():
        p[b] = sum(kw for kw, _ in d.values()) / 1000.0
        q[b] = sum(kvar for _, kvar in d.values()) / 1000.0
    z = np.array([positive_sequence(ln.z_matrix()) for ln in feeder.lines])

    # one common impedance factor so the substation-only voltage floor is v_target
    z = z / (feeder.base_kv**2 / base_mva)
    p, q = p / base_mva, q / base_mva
    probe = validate_radial(NetworkCase(
        [Bus(b, 0.01, 4.0, p[b], q[b]) for b in range(feeder.n_bus)],
        [Line(ln.from_bus, ln.to_bus, zz.real, zz.imag) for ln, zz in zip(feeder.lines, z)],
        [Generator(0, 0.0, np.inf, np.inf)],
    ))
    order = [probe.ids[i] for i in range(probe.n_bus)]  # internal (BFS) order
    u_min = lindistflow_state(probe, p[order], q[order]).u.min()
    factor = (1.0 - v_target**2) / (1.0 - u_min)
    z = z * factor

    buses = [Bus(b, v_min**2, v_max**2, p[b], q[b]) for b in range(feeder.n_bus)]
    lines = [Line(ln.from_bus, ln.to_bus, zz.real, zz.imag, np.inf, k)
             for k, (ln, zz) in enumerate(zip(feeder.lines, z))]
    dg_p = round(dg_fraction * p.sum() * base_mva, 3) / base_mva
    # costs per p.u. hour with c1 in $/MWh and c2 in $/MW^2h
    gens = [Generator(0, 0.0, 10.0 / base_mva, 10.0 / base_mva, base_mva**2, 50.0 * base_mva, 0.0, "substation")]
    gens += [Generator(b, 0.0, dg_p, 0.25 * dg_p, base_mva**2, 10.0 * base_mva, 0.0, f"dg{b}") for b in dg_buses]
    return NetworkCase(buses, lines, gens, base_mva, feeder.base_kv, feeder.name,
                       {"impedance_factor": float(factor)})


def deepest_buses(feeder: MultiphaseFeeder, count):
    """The electrically farthest three-phase buses, none upstream of another."""
    parent = {ln.to_bus: ln.from_bus for ln in feeder.lines}
    depth = np.zeros(feeder.n_bus)
    three = []
    for ln in feeder.lines:
        depth[ln.to_bus] = depth[ln.from_bus] + ln.length_km
        if len(ln.phases) == 3:
            three.append(ln.to_bus)

    def path(b):
        out = set()
        while b in parent:
            out.add(b)
            b = parent[b]
        return out

    picks = []
    for b in sorted(three, key=lambda b: (-depth[b], b)):
        if all(b not in path(c) and c not in path(b) for c in picks):
            picks.append(b)
        if len(picks) == count:
            break
    return sorted(picks)


# name -> (buses, seed, kV, total kW, DG count)
SYNTHETIC = {
    "feeder37": (37, 37, 4.8, 2450.0, 2),
    "feeder123": (123, 123, 4.16, 3490.0, 3),
}


def synthetic_case(name):
    n, seed, kv, kw, n_dg = SYNTHETIC[name]
    feeder = multiphase_feeder(n, seed, name, kv, kw)
    return feeder, reduce_feeder(feeder, deepest_buses(feeder, n_dg))
