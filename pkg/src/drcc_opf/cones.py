"""Algebra of the product cone R+^l x Q^{d1} x ... x Q^{dk}.

Vectors live in a stacked layout: the ``nonneg`` orthant components first,
then each second-order cone block in order. Second-order cones of equal
dimension are processed together as a 2-D view so the per-iteration work is
vectorized.
"""

from dataclasses import dataclass

import numpy as np


def _jdet(V):
    """Jordan determinant v0^2 - |v1|^2 of each row, computed without cancellation."""
    r = np.linalg.norm(V[:, 1:], axis=1)
    return (V[:, 0] - r) * (V[:, 0] + r)


class ConeSpace:
    def __init__(self, nonneg, soc_dims):
        self.nonneg = int(nonneg)
        self.soc_dims = [int(d) for d in soc_dims]
        if any(d < 2 for d in self.soc_dims):
            raise ValueError("second-order cones need dimension >= 2")
        self.dim = self.nonneg + sum(self.soc_dims)
        self.degree = self.nonneg + len(self.soc_dims)
        groups = {}
        start = self.nonneg
        for d in self.soc_dims:
            groups.setdefault(d, []).append(start)
            start += d
        # dim -> (k, d) integer index array into the stacked vector
        self.groups = {
            d: np.asarray(starts, dtype=np.int64)[:, None] + np.arange(d)[None, :]
            for d, starts in sorted(groups.items())
        }

    def identity(self):
        e = np.zeros(self.dim)
        e[: self.nonneg] = 1.0
        for idx in self.groups.values():
            e[idx[:, 0]] = 1.0
        return e

    def min_eig(self, v):
        """Smallest Jordan eigenvalue of ``v`` (negative means outside the cone)."""
        vals = [np.inf]
        if self.nonneg:
            vals.append(v[: self.nonneg].min())
        for idx in self.groups.values():
            V = v[idx]
            vals.append((V[:, 0] - np.linalg.norm(V[:, 1:], axis=1)).min())
        return float(min(vals))

    def violation(self, v):
        """Largest distance-like violation of cone membership, 0 when inside."""
        return max(0.0, -self.min_eig(v)) if self.dim else 0.0

    def dot(self, u, v):
        return float(u @ v)

    def prod(self, u, v):
        """Jordan product u o v."""
        out = np.empty(self.dim)
        l = self.nonneg
        out[:l] = u[:l] * v[:l]
        for idx in self.groups.values():
            U = u[idx]
            V = v[idx]
            out[idx[:, 0]] = np.einsum("ij,ij->i", U, V)
            out[idx[:, 1:]] = U[:, :1] * V[:, 1:] + V[:, :1] * U[:, 1:]
        return out

    def div(self, lam, d):
        """Solve lam o u = d for u (lam interior)."""
        out = np.empty(self.dim)
        l = self.nonneg
        out[:l] = d[:l] / lam[:l]
        for idx in self.groups.values():
            L = lam[idx]
            D = d[idx]
            rho = _jdet(L)
            u0 = (L[:, 0] * D[:, 0] - np.einsum("ij,ij->i", L[:, 1:], D[:, 1:])) / rho
            out[idx[:, 0]] = u0
            out[idx[:, 1:]] = (D[:, 1:] - u0[:, None] * L[:, 1:]) / L[:, :1]
        return out

    def max_step(self, lam, dv):
        """Largest alpha with lam + alpha*dv in the cone (lam interior); may be inf."""
        alpha = np.inf
        l = self.nonneg
        if l:
            neg = dv[:l] < 0
            if neg.any():
                alpha = min(alpha, float((-lam[:l][neg] / dv[:l][neg]).min()))
        for idx in self.groups.values():
            L = lam[idx]
            D = dv[idx]
            nrm2 = _jdet(L)
            nrm = np.sqrt(np.maximum(nrm2, 1e-300))
            Lb = L / nrm[:, None]
            rho0 = (Lb[:, 0] * D[:, 0] - np.einsum("ij,ij->i", Lb[:, 1:], D[:, 1:])) / nrm
            fac = (rho0 + D[:, 0] / nrm) / (Lb[:, 0] + 1.0)
            rho1 = D[:, 1:] / nrm[:, None] - fac[:, None] * Lb[:, 1:]
            val = np.linalg.norm(rho1, axis=1) - rho0
            pos = val > 0
            if pos.any():
                alpha = min(alpha, float((1.0 / val[pos]).min()))
        return alpha

    def nt_scaling(self, s, z):
        return NTScaling.compute(self, s, z)


@dataclass
class NTScaling:
    """Nesterov-Todd scaling W with W z = W^{-1} s = lambda."""

    space: ConeSpace
    d: np.ndarray  # orthant part: sqrt(s/z)
    soc: dict  # dim -> (eta (k,), wbar (k, d))
    lam: np.ndarray

    @classmethod
    def compute(cls, space, s, z):
        l = space.nonneg
        d = np.sqrt(s[:l] / z[:l])
        soc = {}
        lam = np.empty(space.dim)
        lam[:l] = np.sqrt(s[:l] * z[:l])
        for dim, idx in space.groups.items():
            S = s[idx]
            Z = z[idx]
            sn = np.sqrt(np.maximum(_jdet(S), 1e-300))
            zn = np.sqrt(np.maximum(_jdet(Z), 1e-300))
            Sb = S / sn[:, None]
            Zb = Z / zn[:, None]
            gamma = np.sqrt(np.maximum((1.0 + np.einsum("ij,ij->i", S, Z) / (sn * zn)) / 2.0, 1e-300))
            Wb = Sb.copy()
            Wb[:, 0] += Zb[:, 0]
            Wb[:, 1:] -= Zb[:, 1:]
            Wb /= 2.0 * gamma[:, None]
            # keep wbar exactly on the unit hyperboloid
            Wb[:, 0] = np.sqrt(1.0 + np.einsum("ij,ij->i", Wb[:, 1:], Wb[:, 1:]))
            soc[dim] = (np.sqrt(sn / zn), Wb)
            # lambda = W z in closed form; avoids cancellation when W is ill-conditioned
            Lb = np.empty_like(S)
            Lb[:, 0] = gamma
            Lb[:, 1:] = (
                (gamma[:, None] + Zb[:, :1]) * Sb[:, 1:] + (gamma[:, None] + Sb[:, :1]) * Zb[:, 1:]
            ) / (Sb[:, :1] + Zb[:, :1] + 2.0 * gamma[:, None])
            lam[idx] = np.sqrt(sn * zn)[:, None] * Lb
        return cls(space, d, soc, lam)

    def apply(self, v):
        out = np.empty_like(v)
        l = self.space.nonneg
        out[:l] = self.d * v[:l]
        for dim, idx in self.space.groups.items():
            eta, Wb = self.soc[dim]
            V = v[idx]
            w1v1 = np.einsum("ij,ij->i", Wb[:, 1:], V[:, 1:])
            out[idx[:, 0]] = eta * (Wb[:, 0] * V[:, 0] + w1v1)
            coef = w1v1 / (1.0 + Wb[:, 0]) + V[:, 0]
            out[idx[:, 1:]] = eta[:, None] * (V[:, 1:] + coef[:, None] * Wb[:, 1:])
        return out

    def apply_inv(self, v):
        out = np.empty_like(v)
        l = self.space.nonneg
        out[:l] = v[:l] / self.d
        for dim, idx in self.space.groups.items():
            eta, Wb = self.soc[dim]
            V = v[idx]
            w1v1 = np.einsum("ij,ij->i", Wb[:, 1:], V[:, 1:])
            out[idx[:, 0]] = (Wb[:, 0] * V[:, 0] - w1v1) / eta
            coef = w1v1 / (1.0 + Wb[:, 0]) - V[:, 0]
            out[idx[:, 1:]] = (V[:, 1:] + coef[:, None] * Wb[:, 1:]) / eta[:, None]
        return out

    def w2_blocks(self):
        """Diagonal of the orthant part and dense W^2 blocks per SOC group."""
        blocks = {}
        for dim, (eta, Wb) in self.soc.items():
            B = 2.0 * Wb[:, :, None] * Wb[:, None, :]
            B[:, 0, 0] -= 1.0
            idx = np.arange(1, dim)
            B[:, idx, idx] += 1.0
            blocks[dim] = (eta**2)[:, None, None] * B
        return self.d**2, blocks


def identity_scaling(space):
    """The scaling with W = I, used for the initial point."""
    soc = {}
    for dim, idx in space.groups.items():
        k = idx.shape[0]
        Wb = np.zeros((k, dim))
        Wb[:, 0] = 1.0
        soc[dim] = (np.ones(k), Wb)
    return NTScaling(space, np.ones(space.nonneg), soc, space.identity())
