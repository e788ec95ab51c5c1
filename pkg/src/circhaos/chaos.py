"""Hermite/Wick tools, Feynman-graph sums and chaos coefficients.

Conventions
-----------
Hermite polynomials are the probabilists' ones: H_0 = 1, H_1 = x,
H_n = x H_{n-1} - (n-1) H_{n-2}, orthogonal under the standard normal law
with E[H_n H_m] = n! delta_nm.  (Physicists' H_n differ by a 2^{n/2} rescaling.)

Chaos coefficients f_n live on the ordered simplex, so a functional reads
F = sum_n int_{t1<...<tn} f_n dW...dW and the generating functional
Z_F(h) = E[F :exp(phi(h)):] has n-th Frechet derivative f_n at h = 0.
Differentiating exp(-1/2 <h, C(1+C)^-1 h>) gives one factor -C(1+C)^-1
per Feynman pair, so pair factors carry a minus sign.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import operator as op
from .errors import (
    InvalidParameters,
    NonPositiveSpectrum,
    NonZeroInitialRate,
    OddPointCount,
    OutOfDomain,
    TooManyPoints,
)
from .model import (
    CirParams,
    SqGaussParams,
    cir_kernel,
    embed_cir,
    general_kernel,
    mean_function,
    propagator,
    quadratic_kernel_diagonal,
)

MAX_HERMITE = 30
MAX_POINTS = 12
QUAD_RTOL = 1e-10


def hermite(n: int, x):
    """Probabilists' Hermite polynomial H_n(x) by the three-term recurrence."""
    if n < 0 or int(n) != n:
        raise InvalidParameters("hermite order must be a nonnegative integer")
    if n > MAX_HERMITE:
        raise InvalidParameters(f"hermite order capped at {MAX_HERMITE}; use the recurrence directly")
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), x
    if n == 0:
        out = prev
    else:
        for k in range(2, n + 1):
            prev, cur = cur, x * cur - (k - 1) * prev
        out = cur
    return out if out.ndim else float(out)


def wick_power(n: int, y, norm: float):
    """:phi(f)^n: at phi(f) = y with ||f|| = norm, i.e. norm^n H_n(y / norm)."""
    if not norm > 0:
        raise InvalidParameters("norm must be positive")
    return norm**n * hermite(n, np.asarray(y, dtype=float) / norm)


@dataclass(frozen=True)
class FeynmanGraph:
    """Perfect matching of {0, ..., 2m-1}; pairs are (i, j) with i < j, sorted by i."""

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        flat = sorted(i for pair in self.pairs for i in pair)
        if flat != list(range(len(flat))):
            raise InvalidParameters("a Feynman graph must use every index exactly once")

    @property
    def size(self) -> int:
        return 2 * len(self.pairs)


@lru_cache(maxsize=None)
def _pairings(m2: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    def rec(rest):
        if not rest:
            yield ()
            return
        first = rest[0]
        for j in range(1, len(rest)):
            remaining = rest[1:j] + rest[j + 1 :]
            for tail in rec(remaining):
                yield ((first, rest[j]),) + tail

    return tuple(rec(tuple(range(m2))))


def enumerate_pairings(m2: int) -> list[FeynmanGraph]:
    """All perfect matchings of m2 points, in lexicographic order; (m2 - 1)!! of them."""
    if m2 % 2:
        raise OddPointCount(f"cannot pair {m2} points")
    if m2 > MAX_POINTS:
        raise TooManyPoints(f"{m2} points exceeds the cap of {MAX_POINTS}")
    return [FeynmanGraph(p) for p in _pairings(m2)]


def _pair_array(m2: int) -> np.ndarray:
    """Pairings as an integer array of shape (graphs, m2/2, 2)."""
    enumerate_pairings(m2)  # guards
    return np.array(_pairings(m2), dtype=int).reshape(-1, m2 // 2, 2)


def graph_terms(L: np.ndarray) -> np.ndarray:
    """Per-graph products prod_{(i,j) in G} L[i, j] over all matchings of range(len(L))."""
    m2 = L.shape[0]
    if m2 == 0:
        return np.ones(1)
    pa = _pair_array(m2)
    return np.prod(L[pa[..., 0], pa[..., 1]], axis=1)


@dataclass(frozen=True)
class QuadraticFunctional:
    """Y = A + int B dW + int_{t1<t2} C dW dW with ``dim`` independent Brownian components.

    ``b_fn`` maps an array of times of shape (n,) to an (n, dim) array; the
    scalar kernel ``c_kernel`` acts identically on every component.
    """

    a_const: float
    b_fn: Callable[[np.ndarray], np.ndarray] | None
    c_kernel: Callable[[np.ndarray, np.ndarray], np.ndarray] | None
    horizon: tuple[float, float]
    dim: int = 1

    def b_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.b_fn is None:
            return np.zeros(t.shape + (self.dim,))
        return np.asarray(self.b_fn(t), dtype=float).reshape(t.shape + (self.dim,))

    def kernel(self) -> Callable:
        if self.c_kernel is None:
            return lambda s, t: np.zeros(np.broadcast(s, t).shape)
        return self.c_kernel


def _vec_fn(f, dim):
    if f is None:
        return None

    def g(t):
        t = np.asarray(t, dtype=float)
        return np.asarray(f(t), dtype=float).reshape(t.shape + (dim,))

    return g


def _panels(p: SqGaussParams, lo: float, hi: float) -> list[float]:
    return [lo, *p.breakpoints_in(lo, hi), hi]


def _quad_vec(f, edges) -> np.ndarray:
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi > lo:
            total = total + integrate.quad_vec(f, lo, hi, epsabs=0.0, epsrel=QUAD_RTOL)[0]
    return np.asarray(total)


def _mean_path(p: SqGaussParams):
    """Vectorized R~(t); closed form when rbar = 0."""
    if p.rbar.values.ndim == 1:
        return lambda t: np.multiply.outer(propagator(p, np.asarray(t, float), 0.0 * np.asarray(t, float)), p.r0_vec)

    def mean(t):
        t = np.asarray(t, dtype=float)
        return np.array([mean_function(p, float(x)) for x in t.ravel()]).reshape(t.shape + (p.dim,))

    return mean


def assemble_yt(p: SqGaussParams, h=None, k=None, T: float = 1.0) -> QuadraticFunctional:
    """Exponent Y_T of the auxiliary functional Z(h, k) as (A_T, B_T, C_T).

    A_T = int [R~ (1/2 + lb^2/4) R~ + h.h/2 - k.R~] dt
          + (dim/2) int gamma^2 (1 + lb^2/2) int_t^T K(s,t)^2 ds dt
    B_T(t) = -h(t) - gamma(t) int_t^T K(s,t) k(s) ds + (lb/2) R~(t)
             + gamma(t) (1 + lb^2/2) int_t^T K(s,t) R~(s) ds
    C_T = general_kernel.

    The trace term comes from Wick-ordering the quadratic part only; the
    (lb/2) int R dW part is an Ito integral with mean zero and contributes
    no constant.  ``h`` and ``k`` map times to (..., dim) arrays.
    """
    if not T > 0:
        raise InvalidParameters("horizon must be positive")
    dim = p.dim
    lb = p.lambda_bar
    h_fn, k_fn = _vec_fn(h, dim), _vec_fn(k, dim)
    mean = _mean_path(p)
    edges = _panels(p, 0.0, T)

    def a_density(t):
        t = np.atleast_1d(t)
        r = mean(t)
        val = (0.5 + lb**2 / 4) * np.sum(r * r, axis=-1)
        if h_fn is not None:
            hv = h_fn(t)
            val = val + 0.5 * np.sum(hv * hv, axis=-1)
        if k_fn is not None:
            val = val - np.sum(k_fn(t) * r, axis=-1)
        val = val + 0.5 * dim * quadratic_kernel_diagonal(p, T, t)
        return val[0]

    a_const = float(_quad_vec(a_density, edges))

    has_mean = bool(np.any(p.r0_vec != 0)) or p.rbar.values.ndim > 1
    need_b = h_fn is not None or k_fn is not None or has_mean

    def b_fn(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros(t.shape + (dim,))
        if h_fn is not None:
            out -= h_fn(t)
        if has_mean:
            out += 0.5 * lb * mean(t)
        if k_fn is None and not has_mean:
            return out
        for i, ti in enumerate(t.ravel()):
            def integrand(s, ti=ti):
                s1 = np.atleast_1d(s)
                v = np.zeros(dim)
                if has_mean:
                    v = v + (1 + lb**2 / 2) * mean(s1)[0]
                if k_fn is not None:
                    v = v - k_fn(s1)[0]
                return propagator(p, s, ti) * v
            idx = np.unravel_index(i, t.shape)
            out[idx] += float(p.gamma(ti)) * _quad_vec(integrand, _panels(p, float(ti), T))
        return out

    def c_kernel(s, t):
        return general_kernel(p, T, s, t)

    return QuadraticFunctional(a_const, b_fn if need_b else None, c_kernel, (0.0, float(T)), dim)


def exp_second_chaos_coeff(D: op.DiscretizedKernel, times: Sequence[float]) -> float:
    """Chaos coefficient f_n of exp(-int_{t1<t2} C dW dW) at the given times.

    f_n = det_2(1+C)^{-1/2} (-1)^{n/2} sum_G prod_{g in G} [C(1+C)^-1](t_g1, t_g2),
    zero for odd n.
    """
    n = len(times)
    if n % 2:
        return 0.0
    if n > MAX_POINTS:
        raise TooManyPoints(f"{n} points exceeds the cap of {MAX_POINTS}")
    if op.min_eigen_shifted(D) <= 0:
        raise NonPositiveSpectrum("1 + C is not positive")
    K = math.exp(-0.5 * op.log_carleman_det2(D, 1.0))
    if n == 0:
        return K
    R = op.resolvent_kernel_matrix(D, 1.0, np.asarray(times, dtype=float))
    return K * float(np.sum(graph_terms(-R)))


class CirChaosExpansion:
    """Chaos coefficients of sigma_T for the CIR model started at r0 = 0.

    Built once per (params, T, grid): discretizes C_T on [0, T], solves
    (1 + C_T) u = K_T(T, .) gamma once, and caches
    M_T = det_2(1 + C_T)^{-N/2} exp(-(N/2) Tr Q_T), where Q_T is the quadratic
    part of C_T.  For lambda_bar = 0 this is det(1 + C_T)^{-N/2}.  The
    returned coefficient is that of a single component sigma^mu_T against
    W^mu; the other N - 1 components enter through M_T only.
    """

    def __init__(self, p: CirParams, T: float, n_nodes: int = 256):
        if p.r0 != 0:
            raise NonZeroInitialRate("chaos coefficients need r0 = 0")
        if not T > 0:
            raise InvalidParameters("T must be positive")
        self.params = p
        self.T = float(T)
        self.sg = embed_cir(p)
        self.dim = self.sg.dim
        grid = op.QuadratureGrid.gauss_legendre(0.0, self.T, n_nodes)
        self.D = op.discretize(lambda s, t: cir_kernel(p, self.T, s, t), grid, diagonal_correction=True)
        if op.min_eigen_shifted(self.D) <= 0:
            raise NonPositiveSpectrum("1 + C_T is not positive")
        quad_trace = integrate.quad(lambda t: float(quadratic_kernel_diagonal(self.sg, self.T, t)),
                                    0.0, self.T, epsabs=0.0, epsrel=QUAD_RTOL)[0]
        self.log_m = -0.5 * self.dim * (op.log_carleman_det2(self.D, 1.0) + quad_trace)
        self.m_T = math.exp(self.log_m)

    def row(self, s):
        """K_T(T, s) gamma(s)."""
        h = self.params.a / 2.0
        return (self.params.c / 2.0) * np.exp(-h * (self.T - np.asarray(s, dtype=float)))

    def terminal_leg(self, times) -> np.ndarray:
        """[K_T gamma (1 + C_T)^-1](T, t) at each t, via the Nystrom interpolant."""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(t < 0) or np.any(t > self.T):
            raise OutOfDomain(f"times must lie in [0, {self.T}]")
        return op.nystrom_solve(self.D, 1.0, self.row, t)[1]

    def pair_matrix(self, times) -> np.ndarray:
        """Signed pair factors on {t_1..t_n, T}: -[C(1+C)^-1] between times, terminal leg with T."""
        t = np.asarray(times, dtype=float)
        n = t.size
        L = np.zeros((n + 1, n + 1))
        L[:n, :n] = -op.resolvent_kernel_matrix(self.D, 1.0, t)
        leg = self.terminal_leg(t)
        L[:n, n] = leg
        L[n, :n] = leg
        return L

    def graph_terms(self, times) -> np.ndarray:
        """M_T prod L(g) for each Feynman graph on {t_1..t_n, T}, lexicographic order."""
        n = len(times)
        if n % 2 == 0:
            return np.zeros(0)
        if n + 1 > MAX_POINTS:
            raise TooManyPoints(f"order {n} exceeds the cap")
        return self.m_T * graph_terms(self.pair_matrix(np.asarray(times, dtype=float)))

    def coeff(self, times) -> float:
        n = len(times)
        if n % 2 == 0:
            return 0.0
        # fixed-order summation keeps repeated calls bitwise identical
        return float(np.sum(self.graph_terms(times)))

    def first_chaos(self, t) -> np.ndarray:
        return self.m_T * self.terminal_leg(t)

    def projection(self, g: Callable, n_quad: int = 200) -> float:
        """int_0^T f_T(t) g(t) dt with f_T the first-order coefficient."""
        grid = op.QuadratureGrid.gauss_legendre(0.0, self.T, n_quad)
        return float(np.sum(grid.weights * self.first_chaos(grid.nodes) * np.asarray(g(grid.nodes), float)))


def cir_chaos_coeff(p: CirParams, T: float, times: Sequence[float], n_nodes: int = 256) -> float:
    """Order-n chaos coefficient f_T(t_1..t_n) of sigma_T (r0 = 0); zero for even n."""
    if p.r0 != 0:
        raise NonZeroInitialRate("chaos coefficients need r0 = 0")
    if len(times) % 2 == 0:
        return 0.0
    return CirChaosExpansion(p, T, n_nodes).coeff(times)


def first_chaos_projection(p: CirParams, T: float, g: Callable, n_nodes: int = 256) -> float:
    """int_0^T f_T(t) g(t) dt = E[sigma^mu_T W^mu(g)]."""
    return CirChaosExpansion(p, T, n_nodes).projection(g)


def dump_coefficients(rows, stream) -> None:
    """CSV ``t1,...,tn,f_value`` with times ascending."""
    rows = list(rows)
    n = len(rows[0][0]) if rows else 0
    w = csv.writer(stream, lineterminator="\n")
    w.writerow([f"t{i + 1}" for i in range(n)] + ["f_value"])
    for times, value in rows:
        w.writerow([repr(float(x)) for x in sorted(times)] + [repr(float(value))])
