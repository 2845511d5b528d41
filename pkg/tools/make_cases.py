"""Regenerate the bundled case files and their manifest.

    python3 tools/make_cases.py

The 15-bus feeder is the 11 kV system of Das, Kothari and Kalam (1995) with
every load doubled so the voltage floor binds without distributed
generation. Generator data and voltage limits are not part of that source
and are chosen here; the manifest lists them. The 37- and 123-bus feeders
are synthetic (see drcc_opf.feeders).
"""

import hashlib
import json
from pathlib import Path

from drcc_opf.feeders import SYNTHETIC, synthetic_case
from drcc_opf.io import CASE_DIR, dump_case, parse_case
from drcc_opf.network import validate_radial

# (from, to, r ohm, x ohm), bus numbers as in the source (1 = substation)
DAS_LINES = [
    (1, 2, 1.35309, 1.32349), (2, 3, 1.17024, 1.14464), (3, 4, 0.84111, 0.82271),
    (4, 5, 1.52348, 1.02760), (2, 9, 2.01317, 1.35790), (9, 10, 1.68671, 1.13770),
    (2, 6, 2.55727, 1.72490), (6, 7, 1.08820, 0.73400), (6, 8, 1.25143, 0.84410),
    (3, 11, 1.79553, 1.21110), (11, 12, 2.44845, 1.65150), (12, 13, 2.01317, 1.35790),
    (4, 14, 2.23081, 1.50470), (4, 15, 1.19702, 0.80740),
]
# bus: (kW, kVAr)
DAS_LOADS = {
    2: (44.1, 44.99), 3: (70.0, 71.414), 4: (140.0, 142.82), 5: (44.1, 44.99),
    6: (140.0, 142.82), 7: (140.0, 142.82), 8: (70.0, 71.414), 9: (70.0, 71.414),
    10: (44.1, 44.99), 11: (140.0, 142.82), 12: (70.0, 71.414), 13: (44.1, 44.99),
    14: (70.0, 71.414), 15: (140.0, 142.82),
}
LOAD_FACTOR = 2.0
V_MIN, V_MAX = 0.95, 1.05


def das15_text():
    out = [
        "# 15-bus 11 kV radial feeder (Das, Kothari and Kalam, 1995).",
        "# Bus i here is bus i+1 of the source. Loads are twice the source values.",
        "# Generators, costs and voltage limits are not in the source; see manifest.json.",
        "[case]",
        "name = 15bus",
        "units = physical",
        "base_mva = 1.0",
        "base_kv = 11.0",
        "",
        "[buses]",
        "id, v_min, v_max, load_p, load_q",
    ]
    for b in range(1, 16):
        kw, kvar = DAS_LOADS.get(b, (0.0, 0.0))
        out.append(f"{b - 1}, {V_MIN}, {V_MAX}, {round(LOAD_FACTOR * kw / 1000, 6)}, "
                   f"{round(LOAD_FACTOR * kvar / 1000, 6)}")
    out += ["", "[lines]", "id, from, to, r, x, s_max"]
    for k, (f, t, r, x) in enumerate(DAS_LINES):
        out.append(f"{k}, {f - 1}, {t - 1}, {r}, {x}, inf")
    out += [
        "",
        "[generators]",
        "name, bus, p_min, p_max, q_max, c2, c1, c0",
        "substation, 0, 0, 10, 10, 1, 50, 0",
        "dg6, 6, 0, 2.0, 0.5, 1, 10, 0",
        "dg11, 11, 0, 2.0, 0.5, 1, 10, 0",
    ]
    return "\n".join(out) + "\n"


def main():
    CASE_DIR.mkdir(exist_ok=True)
    manifest = {}
    texts = {"15bus": das15_text()}
    for name in SYNTHETIC:
        _, case = synthetic_case(name)
        head = (f"# Synthetic {case.buses.__len__()}-bus stand-in, balanced reduction of a seeded\n"
                "# multiphase feeder; regenerate with tools/make_cases.py.\n")
        texts[name] = head + dump_case(case, "physical")
    for name, text in texts.items():
        path = CASE_DIR / f"{name}.case"
        path.write_text(text, encoding="utf-8")
        net = validate_radial(parse_case(text, str(path)))
        manifest[name] = {
            "file": path.name,
            "buses": net.n_bus,
            "lines": net.n_line,
            "generators": [g.bus for g in net.generators],
            "sha256": hashlib.sha256(text.encode()).hexdigest(),
        }
    manifest["15bus"]["source"] = "Das, Kothari and Kalam (1995), 11 kV, 15 buses"
    manifest["15bus"]["chosen"] = {
        "load_factor": LOAD_FACTOR,
        "voltage_limits": [V_MIN, V_MAX],
        "generators": "substation p,q <= 10 MW/MVAr at 50 $/MWh; DGs at buses 6 and 11, "
                      "p <= 2 MW, q <= 0.5 MVAr at 10 $/MWh; c2 = 1 $/MW^2h for all",
    }
    for name, (n, seed, kv, kw, n_dg) in SYNTHETIC.items():
        manifest[name]["source"] = "synthetic"
        manifest[name]["procedure"] = {
            "seed": seed, "base_kv": kv, "total_kw": kw, "dg_count": n_dg,
            "impedance": "positive sequence of each line's phase matrix, scaled to a 0.955 p.u. floor",
            "loads": "summed over phases",
        }
    (CASE_DIR / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
