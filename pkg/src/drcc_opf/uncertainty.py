"""Forecast-error statistics: sampling, variance estimates and intervals.

Random streams come from NumPy's counter-based Philox generator keyed by a
64-bit seed. Gaussian variates are produced by pushing 53-bit uniform draws,
centred in their bins so they never hit 0 or 1, through :func:`normal_quantile`.
"""

from dataclasses import dataclass
import enum
import math

import numpy as np
from scipy import optimize, special


class OutOfRange(ValueError):
    pass


class EmptySamples(ValueError):
    pass


# Acklam's rational approximation of the inverse normal CDF
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _poly(coef, x):
    out = np.zeros_like(x)
    for c in coef:
        out = out * x + c
    return out


def normal_quantile(q):
    """Inverse standard-normal CDF, vectorized; accurate to about 1e-15 after refinement."""
    q_arr = np.asarray(q, dtype=float)
    if np.any(~((q_arr > 0) & (q_arr < 1))):
        raise OutOfRange(f"normal_quantile needs 0 < q < 1, got {q!r}")
    q = q_arr
    z = np.empty_like(q)
    lo = q < _P_LOW
    hi = q > 1 - _P_LOW
    mid = ~(lo | hi)
    if lo.any():
        t = np.sqrt(-2 * np.log(q[lo]))
        z[lo] = _poly(_C, t) / (_poly(_D, t) * t + 1)
    if hi.any():
        t = np.sqrt(-2 * np.log1p(-q[hi]))
        z[hi] = -_poly(_C, t) / (_poly(_D, t) * t + 1)
    if mid.any():
        r = q[mid] - 0.5
        t = r * r
        z[mid] = _poly(_A, t) * r / (_poly(_B, t) * t + 1)
    # one Halley step on Phi(z) - q, with Phi written through erfc
    err = 0.5 * special.erfc(-z / math.sqrt(2)) - q
    # upper tail: use the complementary form to keep relative accuracy
    err = np.where(hi, (1 - q) - 0.5 * special.erfc(z / math.sqrt(2)), err)
    u = err * math.sqrt(2 * math.pi) * np.exp(z * z / 2)
    z = z - u / (1 + z * u / 2)
    return float(z) if z.ndim == 0 else z


def normal_cdf(z):
    z = np.asarray(z, dtype=float)
    out = 0.5 * special.erfc(-z / math.sqrt(2))
    return float(out) if out.ndim == 0 else out


def chi2_quantile(dof: int, q: float) -> float:
    """Chi-square inverse CDF by root-finding on the regularized lower incomplete gamma."""
    if not 0.0 < q < 1.0:
        raise OutOfRange(f"chi2_quantile needs 0 < q < 1, got {q!r}")
    if dof <= 0:
        raise OutOfRange(f"chi2_quantile needs dof > 0, got {dof!r}")
    k = dof / 2.0

    if q <= 0.5:
        def f(x):
            return special.gammainc(k, x / 2.0) - q
    else:
        # complementary form keeps accuracy in the upper tail
        def f(x):
            return (1.0 - q) - special.gammaincc(k, x / 2.0)

    # Wilson-Hilferty start, then bracket outward
    h = 2.0 / (9.0 * dof)
    guess = dof * max(1 - h + normal_quantile(q) * math.sqrt(h), 1e-3) ** 3
    lo, hi = guess, guess
    while f(lo) > 0:
        lo *= 0.5
    while f(hi) < 0:
        hi = 2.0 * hi + 1.0
    return float(optimize.brentq(f, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200))


def sample_variance(samples) -> np.ndarray:
    """Per-bus second moment (1/N) sum eps^2; ``samples`` has shape (N, buses)."""
    s = np.asarray(samples, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.shape[0] < 2:
        raise EmptySamples(f"need at least 2 samples, got {s.shape[0]}")
    return np.mean(s * s, axis=0)


def variance_interval(var_hat, n: int, xi: float):
    """Two-sided (1 - xi) confidence interval (zeta_l, zeta_h) for the variance."""
    if not 0.0 < xi < 1.0:
        raise OutOfRange(f"xi must lie in (0, 1), got {xi!r}")
    var_hat = np.asarray(var_hat, dtype=float)
    if np.any(var_hat < 0):
        raise OutOfRange("variance must be nonnegative")
    lo = n * var_hat / chi2_quantile(n, 1.0 - xi / 2.0)
    hi = n * var_hat / chi2_quantile(n, xi / 2.0)
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


def shifted_variance(interval, var_hat, delta):
    """Move ``var_hat`` a fraction ``delta`` of the way to the interval's upper end."""
    if not 0.0 <= delta <= 1.0:
        raise OutOfRange(f"delta must lie in [0, 1], got {delta!r}")
    _, hi = interval
    hi = np.asarray(hi, dtype=float)
    var_hat = np.asarray(var_hat, dtype=float)
    if np.any(var_hat > hi * (1 + 1e-12)):
        raise OutOfRange("variance estimate lies above the interval")
    out = var_hat + delta * (hi - var_hat)
    return float(out) if out.ndim == 0 else out


class ErrorTreatment(enum.Enum):
    INDEPENDENT_PQ = "independent"
    CONSTANT_POWER_FACTOR = "constant-pf"


@dataclass(frozen=True)
class ForecastErrorModel:
    """Zero-mean Gaussian errors, independent across buses.

    ``tan_phi`` is the per-bus ratio d_q / d_p, used to couple reactive errors
    to active ones under the constant power factor treatment.
    """

    sigma_p: np.ndarray
    sigma_q: np.ndarray
    tan_phi: np.ndarray

    def __post_init__(self):
        for name in ("sigma_p", "sigma_q", "tan_phi"):
            a = np.asarray(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.any(self.sigma_p < 0) or np.any(self.sigma_q < 0):
            raise OutOfRange("standard deviations must be nonnegative")

    @classmethod
    def from_loads(cls, load_p, load_q, k=0.2, treatment=ErrorTreatment.CONSTANT_POWER_FACTOR):
        """sigma_p = k |d_p|; sigma_q follows the treatment."""
        load_p = np.asarray(load_p, dtype=float)
        load_q = np.asarray(load_q, dtype=float)
        if k < 0:
            raise OutOfRange("k must be nonnegative")
        sigma_p = k * np.abs(load_p)
        tan_phi = np.divide(load_q, load_p, out=np.zeros_like(load_p), where=load_p != 0)
        if treatment is ErrorTreatment.CONSTANT_POWER_FACTOR:
            sigma_q = sigma_p * np.abs(tan_phi)
        else:
            sigma_q = k * np.abs(load_q)
        return cls(sigma_p, sigma_q, tan_phi)

    @property
    def var_p(self):
        return self.sigma_p**2

    @property
    def var_q(self):
        return self.sigma_q**2

    def with_variance(self, var_p, treatment=ErrorTreatment.CONSTANT_POWER_FACTOR, var_q=None):
        """Same model with new active-power variances (reactive follows the treatment)."""
        sp_ = np.sqrt(np.asarray(var_p, dtype=float))
        if treatment is ErrorTreatment.CONSTANT_POWER_FACTOR:
            sq = sp_ * np.abs(self.tan_phi)
        else:
            sq = np.sqrt(np.asarray(var_q, dtype=float)) if var_q is not None else self.sigma_q
        return ForecastErrorModel(sp_, sq, self.tan_phi)


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 64-bit seed for a sub-stream (e.g. a worker or grid point)."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1, np.uint64)[0])


def _uniforms(seed, shape):
    gen = np.random.Generator(np.random.Philox(int(seed)))
    k = gen.integers(0, 1 << 53, size=shape, dtype=np.int64)
    return (k + 0.5) / float(1 << 53)


def standard_normals(seed: int, shape) -> np.ndarray:
    return normal_quantile(_uniforms(seed, shape))


def draw_errors(model: ForecastErrorModel, treatment: ErrorTreatment, count: int, seed: int) -> np.ndarray:
    """``count x buses x 2`` tensor of (eps_p, eps_q) draws."""
    b = len(model.sigma_p)
    if treatment is ErrorTreatment.CONSTANT_POWER_FACTOR:
        if np.any((model.sigma_p > 0) & (model.tan_phi == 0) & (model.sigma_q > 0)):
            raise OutOfRange("constant power factor needs a nonzero active load where sigma > 0")
        z = standard_normals(seed, (count, b))
        ep = z * model.sigma_p
        eq = ep * model.tan_phi
    else:
        z = standard_normals(seed, (count, b, 2))
        ep = z[:, :, 0] * model.sigma_p
        eq = z[:, :, 1] * model.sigma_q
    return np.stack([ep, eq], axis=2)


@dataclass(frozen=True)
class SampleSet:
    """Observed errors, shape (N, buses) for each of P and Q."""

    eps_p: np.ndarray
    eps_q: np.ndarray

    def __post_init__(self):
        ep = np.atleast_2d(np.asarray(self.eps_p, dtype=float))
        eq = np.atleast_2d(np.asarray(self.eps_q, dtype=float))
        if ep.shape != eq.shape:
            raise ValueError("P and Q sample blocks differ in shape")
        if ep.shape[0] < 2:
            raise EmptySamples(f"need at least 2 samples, got {ep.shape[0]}")
        object.__setattr__(self, "eps_p", ep)
        object.__setattr__(self, "eps_q", eq)

    @property
    def n(self):
        return self.eps_p.shape[0]

    @classmethod
    def from_tensor(cls, errors):
        return cls(errors[:, :, 0], errors[:, :, 1])


@dataclass(frozen=True)
class AmbiguityModel:
    var_hat_p: np.ndarray
    zeta_l_p: np.ndarray
    zeta_h_p: np.ndarray
    var_hat_q: np.ndarray
    zeta_l_q: np.ndarray
    zeta_h_q: np.ndarray
    xi: float
    n: int

    @classmethod
    def fit(cls, samples: SampleSet, xi: float):
        vp = sample_variance(samples.eps_p)
        vq = sample_variance(samples.eps_q)
        lp, hp = variance_interval(vp, samples.n, xi)
        lq, hq = variance_interval(vq, samples.n, xi)
        return cls(vp, lp, hp, vq, lq, hq, xi, samples.n)

    @classmethod
    def point(cls, var_p, var_q, n=100):
        """Zero-width set at the given variances."""
        var_p = np.asarray(var_p, dtype=float)
        var_q = np.asarray(var_q, dtype=float)
        return cls(var_p, var_p, var_p, var_q, var_q, var_q, float("nan"), n)
