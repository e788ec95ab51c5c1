"""Nystrom discretization of symmetric integral operators on [t0, T].

A kernel C on [t0, T]^2 becomes the symmetric matrix S = W^1/2 C W^1/2,
whose eigenvalues approximate the operator spectrum.  Determinants,
Carleman-Fredholm determinants and resolvents are all evaluated through the
cached eigendecomposition of S.

Kernels such as exp(-|s - t|) have a kink on the diagonal, which limits plain
Gauss-Legendre Nystrom to second order.  ``diagonal_correction=True`` adds
the row-sum defect d_i = int C(s_i, u) du - sum_j w_j C(s_i, s_j) to the
diagonal of S (it stays symmetric), so the discrete operator integrates
constants exactly against every row.  The determinant is then assembled as
det_2 from the corrected spectrum times exp(mu * Tr), with the trace taken
from the plain quadrature of the smooth diagonal C(s, s).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import AsymmetricKernel, InvalidParameters, NonPositiveSpectrum, OutOfDomain

Kernel = Callable[[np.ndarray, np.ndarray], np.ndarray]

ASYMMETRY_TOL = 1e-8
_ROW_NODES = 48


@dataclass(frozen=True)
class QuadratureGrid:
    t0: float
    T: float
    nodes: np.ndarray
    weights: np.ndarray
    rule: str

    def __post_init__(self):
        if not self.T > self.t0:
            raise InvalidParameters("grid needs T > t0")
        if np.any(np.diff(self.nodes) <= 0):
            raise InvalidParameters("nodes must be strictly increasing")
        if np.any(self.weights <= 0):
            raise InvalidParameters("weights must be positive")

    @classmethod
    def gauss_legendre(cls, t0: float, T: float, n: int = 256) -> "QuadratureGrid":
        x, w = np.polynomial.legendre.leggauss(n)
        half = (T - t0) / 2.0
        return cls(float(t0), float(T), t0 + half * (x + 1.0), half * w, "gauss_legendre")

    @classmethod
    def trapezoid(cls, t0: float, T: float, n: int = 256) -> "QuadratureGrid":
        # endpoints are nodes for this rule
        nodes = np.linspace(t0, T, n)
        h = (T - t0) / (n - 1)
        w = np.full(n, h)
        w[[0, -1]] = h / 2.0
        return cls(float(t0), float(T), nodes, w, "trapezoid")

    @classmethod
    def make(cls, t0: float, T: float, n: int = 256, rule: str = "gauss_legendre"):
        if rule == "gauss_legendre":
            return cls.gauss_legendre(t0, T, n)
        if rule == "trapezoid":
            return cls.trapezoid(t0, T, n)
        raise InvalidParameters(f"unknown quadrature rule {rule!r}")

    @property
    def n(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class DiscretizedKernel:
    grid: QuadratureGrid
    kernel: Kernel
    values: np.ndarray
    sym: np.ndarray
    eigen: np.ndarray
    vectors: np.ndarray
    correction: np.ndarray | None = None

    @property
    def sqrt_w(self) -> np.ndarray:
        return np.sqrt(self.grid.weights)


def row_integrals(kernel: Kernel, t0: float, T: float, points) -> np.ndarray:
    """int_t0^T C(p, u) du for each p, splitting the range at p (smooth on each side)."""
    p = np.atleast_1d(np.asarray(points, dtype=float))
    x, w = np.polynomial.legendre.leggauss(_ROW_NODES)
    total = np.zeros_like(p)
    for lo, hi in ((np.full_like(p, t0), p), (p, np.full_like(p, T))):
        half = (hi - lo)[:, None] / 2.0
        u = lo[:, None] + half * (x[None, :] + 1.0)
        total += np.sum(kernel(p[:, None], u) * w[None, :] * half, axis=1)
    return total


def discretize(kernel: Kernel, grid: QuadratureGrid, diagonal_correction: bool = False) -> DiscretizedKernel:
    """Nystrom matrix, its symmetrization and the descending spectrum."""
    s = grid.nodes
    values = np.asarray(kernel(s[:, None], s[None, :]), dtype=float)
    values = np.broadcast_to(values, (grid.n, grid.n))
    skew = np.max(np.abs(values - values.T)) if grid.n else 0.0
    if skew > ASYMMETRY_TOL:
        raise AsymmetricKernel(f"kernel asymmetry {skew:.3e} exceeds {ASYMMETRY_TOL}")
    values = 0.5 * (values + values.T)
    sw = np.sqrt(grid.weights)
    sym = sw[:, None] * values * sw[None, :]
    correction = None
    if diagonal_correction:
        correction = row_integrals(kernel, grid.t0, grid.T, s) - values @ grid.weights
        sym = sym + np.diag(correction)
    lam, vec = np.linalg.eigh(sym)
    order = np.argsort(lam)[::-1]
    return DiscretizedKernel(grid, kernel, values, sym, lam[order], vec[:, order], correction)


def trace(D: DiscretizedKernel) -> float:
    return float(np.sum(D.grid.weights * np.diag(D.values)))


def _check_spectrum(D: DiscretizedKernel, mu: float) -> np.ndarray:
    shifted = 1.0 + mu * D.eigen
    if D.eigen.size and np.min(shifted) <= 0:
        raise NonPositiveSpectrum(f"1 + mu*lambda reaches {np.min(shifted):.6g} (mu={mu})")
    return shifted


def log_carleman_det2(D: DiscretizedKernel, mu: float = 1.0) -> float:
    _check_spectrum(D, mu)
    x = mu * D.eigen
    return float(np.sum(np.log1p(x) - x))


def carleman_det2(D: DiscretizedKernel) -> float:
    """det_2(1 + C) = prod (1 + l) exp(-l)."""
    return float(np.exp(log_carleman_det2(D, 1.0)))


def log_fredholm_det(D: DiscretizedKernel, mu: float = 1.0) -> float:
    """log det(1 + mu C) = log det_2(1 + mu C) + mu Tr C."""
    return log_carleman_det2(D, mu) + mu * trace(D)


def fredholm_det(D: DiscretizedKernel, mu: float = 1.0) -> float:
    return float(np.exp(log_fredholm_det(D, mu)))


def resolvent_apply(D: DiscretizedKernel, mu: float, f) -> np.ndarray:
    """Solve g + mu C g = f at the nodes (f may carry extra trailing columns)."""
    shifted = _check_spectrum(D, mu)
    f = np.asarray(f, dtype=float)
    sw = D.sqrt_w
    scale = sw if f.ndim == 1 else sw[:, None]
    coeffs = D.vectors.T @ (scale * f)
    coeffs = coeffs / (shifted if f.ndim == 1 else shifted[:, None])
    return (D.vectors @ coeffs) / scale


def operator_matrix(D: DiscretizedKernel) -> np.ndarray:
    """Matrix of g -> C g at the nodes, including the diagonal correction."""
    A = D.values * D.grid.weights[None, :]
    if D.correction is not None:
        A = A + np.diag(D.correction)
    return A


def _check_points(D: DiscretizedKernel, *pts):
    g = D.grid
    tol = 1e-12 * max(1.0, abs(g.T))
    for p in pts:
        p = np.asarray(p)
        if np.any(p < g.t0 - tol) or np.any(p > g.T + tol):
            raise OutOfDomain(f"point outside [{g.t0}, {g.T}]")


def _projected(D: DiscretizedKernel, pts: np.ndarray) -> np.ndarray:
    col = D.kernel(D.grid.nodes[:, None], pts[None, :])
    col = np.broadcast_to(col, (D.grid.n, pts.size))
    return D.vectors.T @ (D.sqrt_w[:, None] * col)


def resolvent_kernel_at(D: DiscretizedKernel, mu: float, s, t):
    """[C (1 + mu C)^-1](s, t) by Nystrom extension; off-node points allowed.

    Uses C(s,t) - mu <C(s,.), (1 + mu C)^-1 C(., t)>, written as a symmetric
    bilinear form in the eigenbasis so that swapping s and t is exact.
    """
    _check_points(D, s, t)
    shifted = _check_spectrum(D, mu)
    s_arr, t_arr = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    flat_s, flat_t = s_arr.ravel(), t_arr.ravel()
    us, ut = _projected(D, flat_s), _projected(D, flat_t)
    corr = np.sum(us * ut / shifted[:, None], axis=0)
    out = (np.asarray(D.kernel(flat_s, flat_t), dtype=float) - mu * corr).reshape(s_arr.shape)
    return out if out.ndim else float(out)


def resolvent_kernel_matrix(D: DiscretizedKernel, mu: float, points) -> np.ndarray:
    """All pairwise values [C (1 + mu C)^-1](p_i, p_j)."""
    pts = np.asarray(points, dtype=float)
    _check_points(D, pts)
    shifted = _check_spectrum(D, mu)
    u = _projected(D, pts)
    gram = (u / shifted[:, None]).T @ u
    out = D.kernel(pts[:, None], pts[None, :]) - mu * gram
    return 0.5 * (out + out.T)


def nystrom_solve(D: DiscretizedKernel, mu: float, f: Callable, points=None):
    """Solve (1 + mu C) g = f for smooth f; return nodal values and g at ``points``.

    Off-node values use the Nystrom interpolant, with the row-sum correction
    when the discretization carries one.
    """
    nodes = D.grid.nodes
    g = resolvent_apply(D, mu, f(nodes))
    if points is None:
        return g, None
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    _check_points(D, pts)
    cross = np.broadcast_to(D.kernel(pts[:, None], nodes[None, :]), (pts.size, nodes.size))
    quad = cross @ (D.grid.weights * g)
    denom = 1.0
    if D.correction is not None:
        defect = row_integrals(D.kernel, D.grid.t0, D.grid.T, pts) - cross @ D.grid.weights
        denom = 1.0 + mu * defect
    return g, (f(pts) - mu * quad) / denom


def min_eigen_shifted(D: DiscretizedKernel) -> float:
    """1 + smallest eigenvalue: positive iff 1 + C is a positive operator (discretely)."""
    return float(1.0 + np.min(D.eigen)) if D.eigen.size else 1.0


def dump_csv(D: DiscretizedKernel, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["node", "weight", "eigenvalue"])
    for x, wt, lam in zip(D.grid.nodes, D.grid.weights, D.eigen):
        w.writerow([repr(float(x)), repr(float(wt)), repr(float(lam))])
