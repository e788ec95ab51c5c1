"""E[exp(-Y)] for Y = A + int B dW + int_{t1<t2} C dW dW with 1 + C positive.

    E[e^{-Y}] = det_2(1 + C)^{-dim/2} exp(-A + 1/2 sum_mu <B^mu, (1 + C)^-1 B^mu>)

Each Brownian component contributes one copy of the scalar determinant.  The
finite-rank closed form, with C = sum c_i g_i (x) g_i and B = sum b_i g_i over
an orthonormal family, factorizes into one-dimensional Gaussian integrals.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import operator as op
from .chaos import QuadraticFunctional
from .errors import ModeOutOfRange, NonPositiveSpectrum


def log_exp_quadratic_expectation(y: QuadraticFunctional, grid: op.QuadratureGrid,
                                  diagonal_correction: bool = True) -> float:
    D = op.discretize(y.kernel(), grid, diagonal_correction=diagonal_correction)
    if op.min_eigen_shifted(D) <= 0:
        raise NonPositiveSpectrum(f"1 + C has min eigenvalue {op.min_eigen_shifted(D):.6g}")
    b = y.b_at(grid.nodes)  # (n, dim)
    bt = D.sqrt_w[:, None] * b
    proj = D.vectors.T @ bt
    quad = float(np.sum(proj**2 / (1.0 + D.eigen)[:, None]))
    return -0.5 * y.dim * op.log_carleman_det2(D, 1.0) - y.a_const + 0.5 * quad


def exp_quadratic_expectation(y: QuadraticFunctional, grid: op.QuadratureGrid,
                              diagonal_correction: bool = True) -> float:
    """E[exp(-Y)] through the Nystrom discretization of C on ``grid``.

    Raises
    ------
    NonPositiveSpectrum
        If the discretized 1 + C is not positive, i.e. Y lies outside the
        admissible set.
    """
    return math.exp(log_exp_quadratic_expectation(y, grid, diagonal_correction))


def finite_rank_expectation(a_const: float, modes: Sequence[tuple[float, float]]) -> float:
    """e^{-A} prod (1 + c)^{-1/2} exp((c + b^2 / (1 + c)) / 2)."""
    log = -float(a_const)
    for b, c in modes:
        if c <= -1:
            raise ModeOutOfRange(f"mode coefficient c={c} must exceed -1")
        log += -0.5 * math.log1p(c) + 0.5 * (c + b * b / (1.0 + c))
    return math.exp(log)


def legendre_modes(t0: float, T: float, count: int):
    """Legendre polynomials rescaled to an orthonormal family on [t0, T]."""
    scale = 2.0 / (T - t0)

    def mode(i):
        coef = np.zeros(i + 1)
        coef[i] = 1.0
        norm = math.sqrt((2 * i + 1) / (T - t0))

        def g(t):
            x = scale * (np.asarray(t, dtype=float) - t0) - 1.0
            return norm * np.polynomial.legendre.legval(x, coef)

        return g

    return [mode(i) for i in range(count)]


def finite_rank_functional(modes: Sequence[tuple[float, float]], t0: float = 0.0, T: float = 1.0,
                           a_const: float = 0.0) -> QuadraticFunctional:
    """Y = A + sum_i [b_i phi(g_i) + c_i :phi(g_i)^2: / 2] on Legendre modes g_i."""
    gs = legendre_modes(t0, T, len(modes))
    bs = np.array([m[0] for m in modes], dtype=float)
    cs = np.array([m[1] for m in modes], dtype=float)

    def b_fn(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        for b, g in zip(bs, gs):
            out = out + b * g(t)
        return out[..., None]

    def c_kernel(s, t):
        out = np.zeros(np.broadcast(np.asarray(s), np.asarray(t)).shape)
        for c, g in zip(cs, gs):
            out = out + c * g(s) * g(t)
        return out

    return QuadraticFunctional(float(a_const), b_fn, c_kernel, (float(t0), float(T)), 1)


def finite_rank_mc(modes: Sequence[tuple[float, float]], n_samples: int = 10**6, seed: int = 0,
                   a_const: float = 0.0):
    """Monte Carlo estimate of E[e^{-Y}] sampling the mode variables phi(g_i) ~ N(0, 1).

    Note the estimator has finite variance only when every c_i > -1/2.
    """
    from .montecarlo import estimate, sample_normals

    k = len(modes)
    if k == 0:
        return estimate(np.ones(max(n_samples, 2)))
    x = sample_normals(seed, n_samples, k)
    y = np.full(n_samples, float(a_const))
    for i, (b, c) in enumerate(modes):
        y += b * x[:, i] + 0.5 * c * (x[:, i] ** 2 - 1.0)
    return estimate(np.exp(-y))


def oracle_crosscheck(modes: Sequence[tuple[float, float]], grid: op.QuadratureGrid,
                      n_samples: int = 10**6, seed: int = 0, a_const: float = 0.0):
    """(analytic, operator path, Monte Carlo Estimate) for a finite-rank Y."""
    analytic = finite_rank_expectation(a_const, modes)
    y = finite_rank_functional(modes, grid.t0, grid.T, a_const)
    operator_value = exp_quadratic_expectation(y, grid, diagonal_correction=False)
    mc = finite_rank_mc(modes, n_samples, seed, a_const)
    return analytic, operator_value, mc
