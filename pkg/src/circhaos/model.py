"""Model parameters, the OU propagator, the mean path and the covariance kernel C_T.

The CIR short rate r_t with dr = a(b - r)dt + c sqrt(r) dW is realised as
r_t = |R_t|^2 for an N-dimensional Ornstein-Uhlenbeck process

    dR_t = alpha(t) (rbar(t) - R_t) dt + gamma(t) dW_t,

with N = 4ab/c^2.  Coefficients are scalar multiples of the identity and
piecewise constant in time, which keeps every propagator exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate

from .errors import InvalidParameters, InvalidTimeOrder, NonIntegerDimension, OutOfDomain

DIM_RTOL = 1e-9
_TIME_TOL = 1e-12


class PiecewiseConstant:
    """Right-continuous step function on [0, inf).

    ``values[j]`` holds on ``[breaks[j-1], breaks[j])`` with ``breaks[-1] = 0``
    and the last value extending to infinity.  Values may be scalars or
    vectors of a common length.
    """

    def __init__(self, values, breaks: Sequence[float] = ()):
        self.breaks = np.asarray(breaks, dtype=float)
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 0:
            vals = vals[None]
        self.values = vals
        if len(self.values) != len(self.breaks) + 1:
            raise InvalidParameters("need exactly one more value than breakpoints")
        if np.any(self.breaks <= 0) or np.any(np.diff(self.breaks) <= 0):
            raise InvalidParameters("breakpoints must be positive and strictly increasing")
        # left edges of every piece, and the running integral at those edges (scalar case)
        self.edges = np.concatenate([[0.0], self.breaks])
        if self.values.ndim == 1:
            self._cum = np.concatenate([[0.0], np.cumsum(self.values[:-1] * np.diff(self.edges))])

    @classmethod
    def constant(cls, value) -> "PiecewiseConstant":
        return cls([value])

    @property
    def is_scalar(self) -> bool:
        return self.values.ndim == 1

    def _index(self, t):
        return np.searchsorted(self.breaks, t, side="right")

    def __call__(self, t):
        return self.values[self._index(t)]

    def cumulative(self, t):
        """Integral of the (scalar) function over [0, t]."""
        t = np.asarray(t, dtype=float)
        j = self._index(t)
        return self._cum[j] + self.values[j] * (t - self.edges[j])

    def integral(self, s, t):
        return self.cumulative(t) - self.cumulative(s)

    def minimum(self) -> float:
        return float(np.min(self.values))

    def breakpoints_in(self, lo: float, hi: float) -> list[float]:
        return [float(b) for b in self.breaks if lo < b < hi]

    def decay_integral(self, lo, hi: float, k: float = 2.0):
        """int_lo^hi exp(-k * int_lo^s f(u) du) ds, exact piece by piece; vectorized in lo."""
        lo = np.asarray(lo, dtype=float)
        out = np.zeros_like(lo)
        a_lo = self.cumulative(lo)
        ends = np.concatenate([self.edges[1:], [np.inf]])
        for left, right, rate in zip(self.edges, ends, self.values):
            seg_lo = np.maximum(lo, left)
            seg_hi = min(hi, right)
            live = seg_hi > seg_lo
            if not np.any(live):
                continue
            width = np.where(live, seg_hi - seg_lo, 0.0)
            head = np.exp(-k * (self.cumulative(seg_lo) - a_lo))
            out += np.where(live, head * -np.expm1(-k * rate * width) / (k * rate), 0.0)
        return out


@dataclass(frozen=True)
class CirParams:
    """CIR coefficients: speed ``a``, level ``b``, volatility ``c``, risk scale, initial rate."""

    a: float
    b: float
    c: float
    lambda_bar: float = 0.0
    r0: float = 0.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.c > 0):
            raise InvalidParameters(f"need a, b, c > 0, got a={self.a}, b={self.b}, c={self.c}")
        if self.r0 < 0 or self.lambda_bar < 0:
            raise InvalidParameters("need r0 >= 0 and lambda_bar >= 0")

    @property
    def dimension(self) -> float:
        return 4.0 * self.a * self.b / self.c**2

    def integer_dimension(self) -> int:
        n = self.dimension
        k = round(n)
        if k < 2 or abs(n - k) > DIM_RTOL * max(1.0, abs(n)):
            raise NonIntegerDimension(f"4ab/c^2 = {n!r} is not an integer >= 2")
        return int(k)

    @property
    def rho(self) -> float:
        return math.sqrt(self.a**2 + 2.0 * self.c**2)


@dataclass(frozen=True)
class SqGaussParams:
    """N-dimensional squared-Gaussian model with scalar piecewise-constant coefficients.

    ``alpha_floor`` is the declared lower bound M with alpha(t) >= M > 0.
    """

    dim: int
    alpha: PiecewiseConstant
    gamma: PiecewiseConstant
    rbar: PiecewiseConstant
    lambda_bar: float = 0.0
    r0_vec: np.ndarray = field(default=None)
    alpha_floor: float | None = None

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise InvalidParameters(f"dimension must be an integer >= 2, got {self.dim}")
        floor = self.alpha.minimum() if self.alpha_floor is None else self.alpha_floor
        if floor <= 0 or self.alpha.minimum() < floor:
            raise InvalidParameters("alpha must stay above a positive floor")
        if self.gamma.minimum() < 0:
            raise InvalidParameters("gamma must be nonnegative")
        r0 = np.zeros(self.dim) if self.r0_vec is None else np.asarray(self.r0_vec, dtype=float)
        if r0.shape != (self.dim,):
            raise InvalidParameters("r0_vec must have length dim")
        object.__setattr__(self, "r0_vec", r0)
        rb = self.rbar.values
        if rb.ndim == 1:
            if not np.all(rb == 0):
                raise InvalidParameters("a nonzero rbar must be given as vectors of length dim")
        elif rb.shape[1] != self.dim:
            raise InvalidParameters("rbar vectors must have length dim")

    @classmethod
    def constant(cls, dim, alpha, gamma, rbar=None, lambda_bar=0.0, r0_vec=None):
        rb = PiecewiseConstant.constant(0.0) if rbar is None else PiecewiseConstant([rbar])
        return cls(dim, PiecewiseConstant.constant(alpha), PiecewiseConstant.constant(gamma),
                   rb, lambda_bar, r0_vec)

    def rbar_at(self, t) -> np.ndarray:
        v = self.rbar(t)
        if self.rbar.values.ndim == 1:
            return np.zeros(np.shape(t) + (self.dim,))
        return v

    def breakpoints_in(self, lo: float, hi: float) -> list[float]:
        pts = set()
        for f in (self.alpha, self.gamma, self.rbar):
            pts.update(f.breakpoints_in(lo, hi))
        return sorted(pts)


def embed_cir(p: CirParams) -> SqGaussParams:
    """Squared-Gaussian representation of a CIR model with integer 4ab/c^2."""
    n = p.integer_dimension()
    r0_vec = np.zeros(n)
    r0_vec[0] = math.sqrt(p.r0)
    return SqGaussParams.constant(n, p.a / 2.0, p.c / 2.0, lambda_bar=p.lambda_bar, r0_vec=r0_vec)


def propagator(p: SqGaussParams, t, s):
    """K(t, s) = exp(-int_s^t alpha), s <= t."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s > t + _TIME_TOL):
        raise InvalidTimeOrder("propagator needs s <= t")
    out = np.exp(-p.alpha.integral(s, np.maximum(t, s)))
    return out if out.ndim else float(out)


def mean_function(p: SqGaussParams, t: float) -> np.ndarray:
    """Deterministic part R~(t) of the OU solution.

    The forcing integral is done by adaptive Gauss-Kronrod quadrature with the
    coefficient breakpoints as panel boundaries.
    """
    if t < 0:
        raise OutOfDomain("mean_function needs t >= 0")
    out = propagator(p, t, 0.0) * p.r0_vec
    if p.rbar.values.ndim == 1 or t == 0:
        return out
    edges = [0.0, *p.breakpoints_in(0.0, t), float(t)]
    for mu in range(p.dim):
        def f(s, mu=mu):
            return propagator(p, t, s) * float(p.alpha(s)) * p.rbar_at(s)[mu]
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            total += integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-10, limit=200)[0]
        out[mu] += total
    return out


def _check_domain(T, *times):
    for x in times:
        x = np.asarray(x)
        if np.any(x < -_TIME_TOL) or np.any(x > T + _TIME_TOL):
            raise OutOfDomain(f"time outside [0, {T}]")


def cir_kernel(p: CirParams, T: float, t1, t2):
    """Second-chaos kernel C_T(t1, t2) of the CIR exponent (symmetric, vectorized).

    The market-price term carries the coefficient c/4, the value the Ito
    expansion of (1/2) int R lambda dW produces.
    """
    _check_domain(T, t1, t2)
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    h = p.a / 2.0
    near = np.exp(-h * np.abs(t1 - t2))
    out = (p.c**2 / (4 * p.a)) * (1 + p.lambda_bar**2 / 2) * (near - np.exp(h * (t1 + t2 - 2 * T)))
    out = out + (p.c / 4.0) * p.lambda_bar * near
    return out if out.ndim else float(out)


def general_kernel(p: SqGaussParams, T: float, t1, t2):
    """Scalar C_T(t1, t2) for general piecewise-constant coefficients (vectorized).

    gamma(t1) [int_m^T K(s,t1)(1 + lb^2/2) K(s,t2) ds] gamma(t2)
      + (lb/2) gamma(min) K(max, min),   m = max(t1, t2).
    """
    _check_domain(T, t1, t2)
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    k_hi_lo = np.exp(-p.alpha.integral(lo, hi))
    tail = p.alpha.decay_integral(hi, T, k=2.0)
    lb = p.lambda_bar
    out = p.gamma(t1) * p.gamma(t2) * k_hi_lo * (1 + lb**2 / 2) * tail
    out = out + 0.5 * lb * p.gamma(lo) * k_hi_lo
    return out if out.ndim else float(out)


def quadratic_kernel_diagonal(p: SqGaussParams, T: float, t):
    """gamma(t)^2 (1 + lb^2/2) int_t^T K(s,t)^2 ds: diagonal of the quadratic part of C_T."""
    t = np.asarray(t, dtype=float)
    return p.gamma(t) ** 2 * (1 + p.lambda_bar**2 / 2) * p.alpha.decay_integral(t, T, k=2.0)
