"""Radial feeder model, validation, path matrix and LinDistFlow states.

External bus ids are arbitrary hashable labels. Validation re-indexes buses
in breadth-first order from the root so that every parent precedes its
children; line ``i`` (internal) is the line feeding internal bus ``i``.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class NetworkError(ValueError):
    pass


class CycleDetected(NetworkError):
    pass


class DisconnectedBus(NetworkError):
    def __init__(self, bus):
        super().__init__(f"bus {bus!r} is not connected to the root")
        self.bus = bus


class MultipleParents(NetworkError):
    def __init__(self, bus):
        super().__init__(f"bus {bus!r} is fed by more than one line")
        self.bus = bus


class MissingRootGenerator(NetworkError):
    pass


@dataclass(frozen=True)
class Bus:
    id: object
    u_min: float = 0.81
    u_max: float = 1.21
    load_p: float = 0.0
    load_q: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.u_min < self.u_max:
            raise NetworkError(f"bus {self.id!r}: need 0 < u_min < u_max")


@dataclass(frozen=True)
class Line:
    from_bus: object
    to_bus: object
    r: float
    x: float
    s_max: float = np.inf
    id: object = None

    def __post_init__(self):
        if self.r < 0 or self.x < 0:
            raise NetworkError(f"line {self.from_bus!r}->{self.to_bus!r}: negative impedance")
        if not self.s_max > 0:
            raise NetworkError(f"line {self.from_bus!r}->{self.to_bus!r}: s_max must be positive")


@dataclass(frozen=True)
class Generator:
    bus: object
    p_min: float = 0.0
    p_max: float = np.inf
    q_max: float = 0.0
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0
    name: str = ""

    def __post_init__(self):
        if not 0.0 <= self.p_min <= self.p_max:
            raise NetworkError(f"generator at {self.bus!r}: need 0 <= p_min <= p_max")
        if self.q_max < 0:
            raise NetworkError(f"generator at {self.bus!r}: q_max must be >= 0")
        if self.c2 < 0:
            raise NetworkError(f"generator at {self.bus!r}: c2 must be >= 0")


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple
    lines: tuple
    generators: tuple
    base_mva: float = 1.0
    base_kv: float = 1.0
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "generators", tuple(self.generators))


@dataclass(frozen=True)
class FlowState:
    """LinDistFlow state; ``f_p``/``f_q`` are per line (line k feeds bus k+1)."""

    f_p: np.ndarray
    f_q: np.ndarray
    u: np.ndarray


@dataclass(frozen=True, eq=False)
class ValidatedNetwork:
    """Immutable, BFS-ordered view of a radial case.

    Per-bus arrays have length ``n_bus``; entries of ``r``, ``x`` and
    ``s_max`` at position ``i`` describe the line feeding bus ``i`` (position 0
    is unused and zero).
    """

    case: NetworkCase
    ids: tuple  # internal index -> external id
    index: dict  # external id -> internal index
    parent: np.ndarray
    r: np.ndarray
    x: np.ndarray
    s_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    load_p: np.ndarray
    load_q: np.ndarray
    gen_bus: np.ndarray  # internal bus of each generator, in case order
    children: tuple
    depth: np.ndarray

    @property
    def n_bus(self):
        return len(self.ids)

    @property
    def n_line(self):
        return len(self.ids) - 1

    @property
    def generators(self):
        return self.case.generators

    @property
    def n_gen(self):
        return len(self.case.generators)

    def gen_array(self, attr):
        return np.array([getattr(g, attr) for g in self.case.generators], dtype=float)

    def ancestors(self, i):
        """Lines (by downstream bus) on the root->i path, nearest first."""
        out = []
        while i > 0:
            out.append(i)
            i = int(self.parent[i])
        return out

    def gen_incidence(self):
        """n_bus x n_gen 0/1 matrix locating generators on buses."""
        M = np.zeros((self.n_bus, self.n_gen))
        M[self.gen_bus, np.arange(self.n_gen)] = 1.0
        return M


def validate_radial(case: NetworkCase) -> ValidatedNetwork:
    buses = {}
    for b in case.buses:
        if b.id in buses:
            raise NetworkError(f"duplicate bus id {b.id!r}")
        buses[b.id] = b
    if not buses:
        raise NetworkError("network has no buses")
    feeder = {}
    kids = {bid: [] for bid in buses}
    for ln in case.lines:
        for end in (ln.from_bus, ln.to_bus):
            if end not in buses:
                raise NetworkError(f"line references unknown bus {end!r}")
        if ln.from_bus == ln.to_bus:
            raise CycleDetected(f"self-loop at bus {ln.from_bus!r}")
        if ln.to_bus in feeder:
            raise MultipleParents(ln.to_bus)
        feeder[ln.to_bus] = ln
        kids[ln.from_bus].append(ln.to_bus)

    roots = [bid for bid in buses if bid not in feeder]
    if not roots:
        raise CycleDetected("every bus has a parent line")
    root = 0 if 0 in roots else roots[0]
    for bid in roots:
        if bid != root:
            raise DisconnectedBus(bid)

    order = [root]
    seen = {root}
    queue = deque([root])
    while queue:
        v = queue.popleft()
        for w in kids[v]:
            if w in seen:
                raise CycleDetected(f"bus {w!r} reached twice")
            seen.add(w)
            order.append(w)
            queue.append(w)
    if len(order) != len(buses):
        # every unreached bus has a parent, so they close a cycle
        raise CycleDetected("lines contain a cycle detached from the root")

    index = {bid: k for k, bid in enumerate(order)}
    n = len(order)
    parent = np.full(n, -1, dtype=np.int64)
    r = np.zeros(n)
    x = np.zeros(n)
    s_max = np.zeros(n)
    depth = np.zeros(n, dtype=np.int64)
    for k, bid in enumerate(order[1:], start=1):
        ln = feeder[bid]
        parent[k] = index[ln.from_bus]
        r[k], x[k], s_max[k] = ln.r, ln.x, ln.s_max
        depth[k] = depth[parent[k]] + 1
    children = tuple(tuple(index[w] for w in kids[bid]) for bid in order)

    gen_bus = []
    for g in case.generators:
        if g.bus not in index:
            raise NetworkError(f"generator references unknown bus {g.bus!r}")
        gen_bus.append(index[g.bus])
    if 0 not in gen_bus:
        raise MissingRootGenerator("no generator (substation) at the root bus")

    def col(attr):
        return np.array([getattr(buses[bid], attr) for bid in order], dtype=float)

    arrays = dict(
        parent=parent, r=r, x=x, s_max=s_max, u_min=col("u_min"), u_max=col("u_max"),
        load_p=col("load_p"), load_q=col("load_q"),
        gen_bus=np.asarray(gen_bus, dtype=np.int64), depth=depth,
    )
    for a in arrays.values():
        a.setflags(write=False)
    return ValidatedNetwork(case=case, ids=tuple(order), index=index, children=children, **arrays)


def build_path_matrix(net: ValidatedNetwork) -> np.ndarray:
    """Dense l x (b-1) matrix with a[i, j] = 1 iff line i+1 is on the root->(j+1) path."""
    n = net.n_bus
    A = np.zeros((n - 1, n - 1))
    for j in range(1, n):
        k = j
        while k > 0:
            A[k - 1, j - 1] = 1.0
            k = int(net.parent[k])
    A.setflags(write=False)
    return A


def lindistflow_state(net: ValidatedNetwork, inj_p, inj_q, u0: float = 1.0) -> FlowState:
    """Recursive LinDistFlow for per-bus net loads (demand minus generation).

    Accepts vectors of length ``n_bus`` (the root entry is ignored) or stacks
    of them with shape ``(S, n_bus)``.
    """
    inj_p = np.asarray(inj_p, dtype=float)
    inj_q = np.asarray(inj_q, dtype=float)
    batched = inj_p.ndim == 2
    f_p, f_q, u = kernels.radial_sweep(
        net.parent, net.r, net.x,
        np.ascontiguousarray(np.atleast_2d(inj_p)), np.ascontiguousarray(np.atleast_2d(inj_q)), u0,
    )
    if not batched:
        return FlowState(f_p[0, 1:], f_q[0, 1:], u[0])
    return FlowState(f_p[:, 1:], f_q[:, 1:], u)
