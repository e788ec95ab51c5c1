"""Zero-coupon CIR bond prices: operator formula, closed-form Riccati, RK4 Riccati.

With lambda_bar = 0 and tau = T - t the price is exp(-beta r_t - alpha) where,
with C_T the kernel of the CIR embedding on [t, T],

    beta  = (4 / c^2) [C_T (1 + 2 C_T)^-1](t, t),
    alpha = (N / 2) log det(1 + 2 C_T),   N = 4ab / c^2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import operator as op
from .errors import InvalidParameters, InvalidTimeOrder, MarketPriceUnsupported
from .model import CirParams, cir_kernel

METHODS = ("operator", "riccati_closed", "riccati_ode")
ODE_STEPS = 2048
FD_STEP = 1e-5


@dataclass(frozen=True)
class BondQuote:
    t: float
    T: float
    r_t: float
    price: float
    beta: float
    alpha_fn: float
    method: str

    @property
    def yield_(self) -> float:
        return -math.log(self.price) / (self.T - self.t)

    def as_dict(self) -> dict:
        return {"t": self.t, "T": self.T, "r_t": self.r_t, "price": self.price, "beta": self.beta,
                "alpha": self.alpha_fn, "yield": self.yield_, "method": self.method}


def _check_times(t: float, T: float) -> float:
    if not T > t:
        raise InvalidTimeOrder(f"need t < T, got t={t}, T={T}")
    return float(T - t)


def operator_quantities(p: CirParams, tau: float, n_nodes: int = 256):
    """(beta, alpha) from the Nystrom-discretized C_T on an interval of length tau."""
    if p.lambda_bar != 0:
        raise MarketPriceUnsupported("the operator bond price needs lambda_bar = 0")
    n = p.integer_dimension()
    grid = op.QuadratureGrid.gauss_legendre(0.0, tau, n_nodes)
    D = op.discretize(lambda s, u: cir_kernel(p, tau, s, u), grid, diagonal_correction=True)
    beta = 4.0 / p.c**2 * op.resolvent_kernel_at(D, 2.0, 0.0, 0.0)
    alpha = 0.5 * n * op.log_fredholm_det(D, 2.0)
    return float(beta), float(alpha)


def bond_price_operator(p: CirParams, t: float, T: float, r_t: float, n_nodes: int = 256) -> BondQuote:
    """Bond price from the Fredholm determinant and resolvent of C_T on [t, T]."""
    tau = _check_times(t, T)
    beta, alpha = operator_quantities(p, tau, n_nodes)
    return BondQuote(float(t), float(T), float(r_t), math.exp(-beta * r_t - alpha), beta, alpha, "operator")


def riccati_closed(a: float, b: float, c: float, tau: float):
    """Closed-form (beta, alpha) with rho = sqrt(a^2 + 2c^2); the alpha prefactor is 2ab/c^2."""
    rho = math.sqrt(a * a + 2 * c * c)
    # scaled by e^{-rho tau} so long maturities do not overflow
    q = -math.expm1(-rho * tau)
    den = (rho + a) * q + 2 * rho * math.exp(-rho * tau)
    beta = 2 * q / den
    log_ratio = math.log(2 * rho) + 0.5 * (a - rho) * tau - math.log(den)
    alpha = -(2 * a * b / c**2) * log_ratio
    return beta, alpha


def bond_price_riccati_closed(p: CirParams, t: float, T: float, r_t: float) -> BondQuote:
    tau = _check_times(t, T)
    if p.lambda_bar != 0:
        raise MarketPriceUnsupported("closed form is for lambda_bar = 0")
    beta, alpha = riccati_closed(p.a, p.b, p.c, tau)
    return BondQuote(float(t), float(T), float(r_t), math.exp(-beta * r_t - alpha), beta, alpha, "riccati_closed")


def riccati_ode_solve(p: CirParams, t: float, T: float, steps: int = ODE_STEPS):
    """Classical RK4 for d beta/dt = c^2 beta^2/2 + a beta - 1, d alpha/dt = -ab beta, backward from T."""
    tau = _check_times(t, T)
    a, b, c = p.a, p.b, p.c
    h = tau / steps

    def f(y):
        # derivatives in tau = T - t
        beta = y[0]
        return np.array([1.0 - a * beta - 0.5 * c * c * beta * beta, a * b * beta])

    y = np.zeros(2)
    for _ in range(steps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return float(y[0]), float(y[1])


def bond_price_riccati_ode(p: CirParams, t: float, T: float, r_t: float) -> BondQuote:
    beta, alpha = riccati_ode_solve(p, t, T)
    return BondQuote(float(t), float(T), float(r_t), math.exp(-beta * r_t - alpha), beta, alpha, "riccati_ode")


def bond_price(p: CirParams, t: float, T: float, r_t: float, method: str = "riccati_closed",
               n_nodes: int = 256) -> BondQuote:
    if method == "operator":
        return bond_price_operator(p, t, T, r_t, n_nodes)
    if method == "riccati_closed":
        return bond_price_riccati_closed(p, t, T, r_t)
    if method == "riccati_ode":
        return bond_price_riccati_ode(p, t, T, r_t)
    raise InvalidParameters(f"unknown method {method!r}; choose from {METHODS}")


def yield_curve(p: CirParams, t: float, r_t: float, maturities: Sequence[float],
                method: str = "riccati_closed", n_nodes: int = 256) -> list[tuple[float, float, float]]:
    """Rows (T, price, yield) with yield = -log(price) / (T - t)."""
    mats = [float(m) for m in maturities]
    if not mats:
        raise InvalidParameters("maturity list is empty")
    if any(m <= t for m in mats) or any(b <= a for a, b in zip(mats, mats[1:])):
        raise InvalidParameters("maturities must be ascending and beyond t")
    rows = []
    for m in mats:
        q = bond_price(p, t, m, r_t, method, n_nodes)
        rows.append((m, q.price, q.yield_))
    return rows


def long_yield(p: CirParams) -> float:
    """tau -> infinity limit of the yield, 2ab / (rho + a)."""
    return 2 * p.a * p.b / (p.rho + p.a)


def forward_density(p: CirParams, T: float, step: float = FD_STEP) -> float:
    """h_T = -dP_{0T}/dT by central difference on the closed form at r = p.r0."""
    if not T > 0:
        raise InvalidParameters("T must be positive")

    def price(tau):
        beta, alpha = riccati_closed(p.a, p.b, p.c, tau)
        return math.exp(-beta * p.r0 - alpha)

    return -(price(T + step) - price(T - step)) / (2 * step)


def curve_rows(p: CirParams, t: float, r_t: float, maturities: Sequence[float], n_nodes: int = 256):
    """Rows for the curve CSV: operator and closed-form prices side by side."""
    yield_curve(p, t, r_t, maturities, "riccati_closed")  # validation
    rows = []
    for m in maturities:
        qo = bond_price_operator(p, t, m, r_t, n_nodes)
        qc = bond_price_riccati_closed(p, t, m, r_t)
        rel = abs(qo.price - qc.price) / qc.price
        rows.append({"maturity": float(m), "price_operator": qo.price, "price_riccati": qc.price,
                     "rel_err": rel, "beta": qo.beta, "alpha": qo.alpha_fn, "yield": qo.yield_})
    return rows


CURVE_HEADER = ["maturity", "price_operator", "price_riccati", "rel_err", "beta", "alpha", "yield"]


def dump_curve(rows, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for row in rows:
        w.writerow([repr(float(row[k])) for k in CURVE_HEADER])
