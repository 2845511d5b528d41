"""Canonical-form conic problems.

    minimize    c^T x + offset
    subject to  A x = b
                x in K = Free^f0 x R+^... x Q^{d1} x ...

Variables are laid out in ordered segments, each tagged ``free``,
``nonneg`` or ``soc``; the ``names`` map ties named variable blocks to their
positions so a raw solver vector can be read back.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

FREE = "free"
NONNEG = "nonneg"
SOC = "soc"
_KINDS = (FREE, NONNEG, SOC)


@dataclass(frozen=True)
class Segment:
    kind: str
    start: int
    dim: int


@dataclass(frozen=True)
class ConicProblem:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    segments: tuple
    offset: float = 0.0
    names: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.c)
        if self.A.shape != (len(self.b), n):
            raise ValueError(f"A has shape {self.A.shape}, expected {(len(self.b), n)}")
        if sum(s.dim for s in self.segments) != n:
            raise ValueError("cone segments do not cover the variable vector")
        pos = 0
        for s in self.segments:
            if s.kind not in _KINDS:
                raise ValueError(f"unknown cone kind {s.kind!r}")
            if s.start != pos:
                raise ValueError("cone segments must be contiguous and ordered")
            if s.kind == SOC and s.dim < 2:
                raise ValueError("second-order cone segments need dim >= 2")
            pos += s.dim

    @property
    def n(self):
        return len(self.c)

    def var(self, name):
        return self.names[name]

    def value(self, x, name):
        return np.asarray(x)[self.names[name]]

    def objective(self, x):
        return float(self.c @ x) + self.offset

    def dump(self):
        """Plain-text dump: objective, triplet equalities, cone layout."""
        lines = [f"conic-problem v1 n={self.n} m={len(self.b)}", f"offset {float(self.offset)!r}"]
        for j in np.flatnonzero(self.c):
            lines.append(f"c {j} {float(self.c[j])!r}")
        coo = self.A.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for k in order:
            lines.append(f"A {coo.row[k]} {coo.col[k]} {float(coo.data[k])!r}")
        for i in np.flatnonzero(self.b):
            lines.append(f"b {i} {float(self.b[i])!r}")
        for s in self.segments:
            lines.append(f"cone {s.kind} {s.start} {s.dim}")
        for name, idx in sorted(self.names.items()):
            idx = np.atleast_1d(idx)
            lines.append(f"var {name} " + " ".join(str(int(i)) for i in idx.ravel()))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dump(cls, text):
        rows, cols, vals, cs, bs, segs, names = [], [], [], {}, {}, [], {}
        it = iter(text.splitlines())
        head = next(it).split()
        if head[0] != "conic-problem":
            raise ValueError("not a conic-problem dump")
        n = int(head[2].split("=")[1])
        m = int(head[3].split("=")[1])
        offset = 0.0
        for line in it:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "offset":
                offset = float(tok[1])
            elif tok[0] == "c":
                cs[int(tok[1])] = float(tok[2])
            elif tok[0] == "A":
                rows.append(int(tok[1]))
                cols.append(int(tok[2]))
                vals.append(float(tok[3]))
            elif tok[0] == "b":
                bs[int(tok[1])] = float(tok[2])
            elif tok[0] == "cone":
                segs.append(Segment(tok[1], int(tok[2]), int(tok[3])))
            elif tok[0] == "var":
                names[tok[1]] = np.array([int(t) for t in tok[2:]], dtype=np.int64)
        c = np.zeros(n)
        for j, v in cs.items():
            c[j] = v
        b = np.zeros(m)
        for i, v in bs.items():
            b[i] = v
        A = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
        return cls(c, A, b, tuple(segs), offset, names)


class ProblemBuilder:
    """Incremental construction of a :class:`ConicProblem`.

    Segments appear in creation order. Each ``soc`` call creates one cone.
    """

    def __init__(self):
        self._segments = []
        self._n = 0
        self._names = {}
        self._c = []
        self._rows = []
        self._cols = []
        self._vals = []
        self._b = []
        self.offset = 0.0

    def _add(self, name, size, kind):
        if name in self._names:
            raise ValueError(f"duplicate variable block {name!r}")
        idx = np.arange(self._n, self._n + size, dtype=np.int64)
        if size:
            self._segments.append(Segment(kind, self._n, size))
        self._n += size
        self._names[name] = idx
        return idx

    def free(self, name, size):
        return self._add(name, size, FREE)

    def nonneg(self, name, size):
        return self._add(name, size, NONNEG)

    def soc(self, name, dim):
        return self._add(name, dim, SOC)

    def cost(self, idx, coef):
        idx = np.atleast_1d(idx)
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape)
        for j, v in zip(idx.tolist(), coef.tolist()):
            if v != 0.0:
                self._c.append((j, v))

    def eq(self, terms, rhs):
        """Add ``sum(coef * x[idx]) == rhs``; ``terms`` is a list of (idx, coef)."""
        row = len(self._b)
        merged = {}
        for idx, coef in terms:
            idx = np.atleast_1d(idx)
            coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape)
            for j, v in zip(idx.tolist(), coef.tolist()):
                merged[j] = merged.get(j, 0.0) + v
        for j, v in merged.items():
            if v != 0.0:
                self._rows.append(row)
                self._cols.append(j)
                self._vals.append(v)
        self._b.append(float(rhs))
        return row

    def build(self, meta=None):
        c = np.zeros(self._n)
        for j, v in self._c:
            c[j] += v
        A = sp.csr_matrix(
            (self._vals, (self._rows, self._cols)), shape=(len(self._b), self._n)
        )
        A.sum_duplicates()
        return ConicProblem(
            c=c,
            A=A,
            b=np.asarray(self._b, dtype=float),
            segments=tuple(self._segments),
            offset=self.offset,
            names=dict(self._names),
            meta=dict(meta or {}),
        )
