"""Compiled vs pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeats 5]

Times the LDL factorization and solve on a random sparse KKT system of the
size the 123-bus DR problem produces, a batched radial sweep, and an
end-to-end DR solve per backend.
"""

import argparse
import time

import numpy as np

from drcc_opf import io as cio
from drcc_opf import kernels
import scipy.sparse as sp

from drcc_opf.cones import ConeSpace, identity_scaling
from drcc_opf.formulation import Mode, RiskConfig, solve_opf
from drcc_opf.kkt import KKTSystem
from drcc_opf.socp import SolverConfig
from drcc_opf.uncertainty import AmbiguityModel


def best_of(fn, repeats):
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--case", default="feeder123")
    args = ap.parse_args()

    net = cio.load_network(args.case)
    amb = AmbiguityModel.fit(cio.synth_samples(net, 0.2, 100, 7), 0.005)
    cfg = RiskConfig(mode=Mode.DRCC, eta_v=0.05, xi=0.005)
    rng = np.random.default_rng(0)
    n, p = 1500, 600
    A = sp.random(p, n, density=4.0 / n, random_state=1, format="csr") + sp.eye(p, n, format="csr")
    G = -sp.eye(n, format="csr")
    space = ConeSpace(n, [])
    sweep_p = np.ascontiguousarray(rng.normal(size=(2000, net.n_bus)))
    sweep_q = np.ascontiguousarray(rng.normal(size=(2000, net.n_bus)))

    backends = ["python"]
    try:
        kernels.get_backend("cython")
        backends.insert(0, "cython")
    except ImportError:
        print("compiled extension not built; timing the Python kernels only")

    rows = []
    for name in backends:
        kern = kernels.get_backend(name)
        kkt = KKTSystem(A, G, space, backend=name)
        scaling = identity_scaling(space)
        kkt.factor(scaling)
        rhs = rng.normal(size=kkt.N)
        t_factor = best_of(lambda: kkt.factor(scaling), args.repeats)
        t_solve = best_of(lambda: kkt.solve(rhs), args.repeats)
        t_sweep = best_of(lambda: kern.radial_sweep(net.parent, net.r, net.x, sweep_p, sweep_q, 1.0),
                          args.repeats)
        t_e2e = best_of(lambda: solve_opf(net, Mode.DRCC, cfg, ambiguity=amb, solver=SolverConfig(backend=name)),
                        max(1, args.repeats // 2))
        rows.append((name, t_factor, t_solve, t_sweep, t_e2e))

    print(f"KKT dimension {kkt.N}, factor nonzeros {kkt.factor_nnz}; DR solve on {args.case}")
    print(f"{'backend':<8}{'factor ms':>12}{'solve ms':>12}{'sweep ms':>12}{'DR solve s':>12}")
    for name, f, s, w, e in rows:
        print(f"{name:<8}{f * 1e3:>12.3f}{s * 1e3:>12.3f}{w * 1e3:>12.3f}{e:>12.4f}")
    if len(rows) == 2:
        (_, *c), (_, *p) = rows
        print("speedup " + "  ".join(f"{a / b:.1f}x" for a, b in zip(p, c)))


if __name__ == "__main__":
    main()
