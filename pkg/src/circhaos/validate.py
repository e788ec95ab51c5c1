"""Acceptance checks shared by ``circhaos validate`` and the test suite.

Each check returns a :class:`CheckResult` with the measured quantities, so a
failure reports how far off it was.  ``fast=True`` shrinks Monte Carlo sizes
(and therefore loosens the effective statistical resolution) for a quick run.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import chaos, expquad, montecarlo as mc, operator as op, pricing
from .model import CirParams, SqGaussParams, cir_kernel, embed_cir, general_kernel

A_GRID = (0.1, 0.5, 1.0)
N_GRID = (2, 3, 4)
TAU_GRID = (0.5, 1.0, 5.0, 10.0)
C_VOL = 0.2
# errors this small are at double-precision roundoff and cannot shrink further
ROUNDOFF = 1e-13

FINITE_RANK_CASES = (
    [(0.0, 1.0)],
    [(0.2, -0.4), (0.0, 2.0)],
    [(1.0, 0.5), (-2.0, 4.0), (0.2, -0.3)],
    [(0.1, -0.45), (0.1, 0.1), (-1.0, 3.0), (0.5, 1.0)],
    [(0.3, -0.2), (-0.7, 0.8), (1.5, 2.5), (0.0, -0.1), (-2.0, 5.0)],
)


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.details.items())
        return f"{status} criterion {self.number} ({self.name}): {shown} [{self.seconds:.1f}s]"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def cir_grid():
    """(a, N, params) over the pricing grid, b chosen so that 4ab/c^2 = N."""
    for a in A_GRID:
        for n in N_GRID:
            yield a, n, CirParams(a, n * C_VOL**2 / (4 * a), C_VOL)


def _timed(number: int, name: str, body: Callable[[], tuple[bool, dict]]) -> CheckResult:
    start = time.perf_counter()
    passed, details = body()
    return CheckResult(number, name, bool(passed), details, time.perf_counter() - start)


def check_operator_vs_riccati(fast: bool = False) -> CheckResult:
    def body():
        worst, worst_ratio_fail, ok = 0.0, 0, True
        for _, _, p in cir_grid():
            for tau in TAU_GRID:
                bc, ac = pricing.riccati_closed(p.a, p.b, p.c, tau)
                b256, a256 = pricing.operator_quantities(p, tau, 256)
                b512, a512 = pricing.operator_quantities(p, tau, 512)
                for e1, e2, ref in ((abs(b256 - bc), abs(b512 - bc), bc), (abs(a256 - ac), abs(a512 - ac), ac)):
                    worst = max(worst, e1)
                    floor = ROUNDOFF * max(1.0, abs(ref))
                    if not (e2 <= e1 / 4 or max(e1, e2) <= floor):
                        worst_ratio_fail += 1
        ok = worst <= 1e-4 and worst_ratio_fail == 0
        return ok, {"max_err_256": worst, "cases_without_4x_drop": worst_ratio_fail, "cases": 36}

    return _timed(1, "operator vs Riccati bond pricing", body)


def check_riccati_residual(fast: bool = False, step: float = 1e-3) -> CheckResult:
    def body():
        worst = 0.0
        for _, _, p in cir_grid():
            for tau in TAU_GRID:
                beta = pricing.operator_quantities(p, tau, 256)[0]
                up = pricing.operator_quantities(p, tau + step, 256)[0]
                down = pricing.operator_quantities(p, tau - step, 256)[0]
                dbeta_dt = -(up - down) / (2 * step)  # t moves opposite to tau
                res = dbeta_dt - (p.c**2 * beta**2 / 2 + p.a * beta - 1)
                worst = max(worst, abs(res))
        return worst < 1e-3, {"max_residual": worst}

    return _timed(2, "Riccati ODE residual", body)


def check_expquad(fast: bool = False) -> CheckResult:
    n = 10**5 if fast else 10**6

    def body():
        grid = op.QuadratureGrid.gauss_legendre(0.0, 1.0, 32)
        worst_rel, worst_z, ok = 0.0, 0.0, True
        for i, modes in enumerate(FINITE_RANK_CASES):
            analytic, operator_value, est = expquad.oracle_crosscheck(modes, grid, n_samples=n, seed=100 + i)
            rel = abs(operator_value - analytic) / analytic
            z = max(abs(est.mean - analytic), abs(est.mean - operator_value)) / est.stderr
            worst_rel, worst_z = max(worst_rel, rel), max(worst_z, z)
            ok &= rel <= 1e-8 and z <= 3
        return ok, {"max_rel_operator_vs_closed": worst_rel, "max_mc_z": worst_z,
                    "cases": len(FINITE_RANK_CASES), "samples": n}

    return _timed(3, "exponential-quadratic triangulation", body)


def check_potential(fast: bool = False) -> CheckResult:
    n, dt = (2 * 10**4, 5e-3) if fast else (2 * 10**5, 1e-3)

    def body():
        p = CirParams(0.5, 0.04, 0.2, 0.0, r0=0.04)
        horizons = [1.0, 5.0, 10.0]
        f = mc.accumulate_functionals(embed_cir(p), mc.SimConfig(n, dt, 10.0, seed=7), record_times=horizons)
        details, ok = {}, True
        for i, T in enumerate(horizons):
            d = mc.estimate(f.X[:, i] ** 2 - (1 - f.V[:, i]))
            z = d.mean / d.stderr if d.stderr > 0 else 0.0
            details[f"z_T{T:g}"] = z
            details[f"EV_T{T:g}"] = float(np.mean(f.V[:, i]))
            ok &= abs(z) <= 3
        for i in range(len(horizons) - 1):
            drop = mc.estimate(f.V[:, i] - f.V[:, i + 1])
            zdrop = drop.mean / drop.stderr
            details[f"zdrop_{horizons[i]:g}_{horizons[i + 1]:g}"] = zdrop
            ok &= zdrop > 3
        details["paths"] = n
        return ok, details

    return _timed(4, "E[X_T^2] = 1 - E[V_T] and decay of E[V_T]", body)


TEST_FUNCTIONS = {"1": lambda t: np.ones_like(t), "t": lambda t: t, "sin t": np.sin}


def check_first_chaos(fast: bool = False) -> CheckResult:
    n, dt = (10**5, 2e-3) if fast else (10**6, 1e-3)

    def body():
        p = CirParams(0.5, 0.04, 0.2)
        expansion = chaos.CirChaosExpansion(p, 1.0)
        gs = list(TEST_FUNCTIONS.values())
        f = mc.accumulate_functionals(embed_cir(p), mc.SimConfig(n, dt, 1.0, seed=11), test_functions=gs,
                                      need_x=False)
        samples = mc.projection_samples(f)
        details, ok = {}, True
        for j, name in enumerate(TEST_FUNCTIONS):
            exact = expansion.projection(gs[j])
            est = mc.estimate(samples[:, j])
            z = (est.mean - exact) / est.stderr
            details[f"analytic[{name}]"] = exact
            details[f"z[{name}]"] = z
            ok &= abs(z) <= 3
        details["paths"] = n
        return ok, details

    return _timed(5, "first-chaos projection vs Monte Carlo", body)


def _double_factorial(k: int) -> int:
    return math.prod(range(k, 0, -2)) if k > 0 else 1


def check_feynman(fast: bool = False) -> CheckResult:
    def body():
        counts_ok = all(len(chaos.enumerate_pairings(m)) == _double_factorial(m - 1) for m in (2, 4, 6, 8, 10))
        p = CirParams(0.5, 0.04, 0.2)
        e = chaos.CirChaosExpansion(p, 1.0)
        t1, t2, t3 = 0.2, 0.5, 0.9
        leg = e.terminal_leg([t1, t2, t3])
        R = lambda s, t: op.resolvent_kernel_at(e.D, 1.0, s, t)
        # the three displayed fourth-order terms, each pair factor carrying its -1
        terms = [-e.m_T * leg[2] * R(t1, t2), -e.m_T * leg[1] * R(t1, t3), -e.m_T * leg[0] * R(t2, t3)]
        f3 = e.coeff([t1, t2, t3])
        structure_err = abs(f3 - sum(terms))
        perms = [e.coeff(list(q)) for q in itertools.permutations([t1, t2, t3])]
        sym_err = max(abs(v - perms[0]) for v in perms)
        ok = counts_ok and structure_err <= 1e-12 * max(1.0, abs(f3)) and sym_err <= 1e-10
        return ok, {"counts_ok": counts_ok, "f3": f3, "graph_sum_err": structure_err, "perm_spread": sym_err}

    return _timed(6, "Feynman-graph combinatorics", body)


def check_hermite(fast: bool = False) -> CheckResult:
    def body():
        x, w = np.polynomial.hermite_e.hermegauss(64)
        w = w / math.sqrt(2 * math.pi)
        # f = 1, g = t on [0, 1]: <f,g>/(|f||g|) = sqrt(3)/2
        rho = math.sqrt(3) / 2
        X = x[:, None]
        Y = rho * x[:, None] + math.sqrt(1 - rho**2) * x[None, :]
        W2 = w[:, None] * w[None, :]
        orth = 0.0
        for n in range(6):
            for m in range(6):
                val = float(np.sum(W2 * chaos.hermite(n, X) * chaos.hermite(m, Y)))
                target = math.factorial(n) * rho**n if n == m else 0.0
                orth = max(orth, abs(val - target))
        norm = max(abs(float(np.sum(w * np.exp(s * x - s * s / 2))) - 1) for s in (0.1, 1.0, 3.0))
        ys = np.linspace(-3, 3, 61)
        partial = 0.0
        for s in (0.25, 0.5, 1.0, 1.5):
            total = sum(chaos.wick_power(n, ys, s) / math.factorial(n) for n in range(27))
            partial = max(partial, float(np.max(np.abs(total - np.exp(ys - s * s / 2)))))
        ok = orth <= 1e-8 and norm <= 1e-10 and partial <= 1e-8
        return ok, {"orthogonality_err": orth, "wick_exp_norm_err": norm, "partial_sum_err_n26": partial}

    return _timed(7, "Hermite/Wick suite", body)


def random_kernels(seed: int = 3, count: int = 5):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        amp, rate = rng.uniform(0.2, 1.5), rng.uniform(0.3, 3.0)
        coeffs = rng.normal(size=3) * 0.4

        def kern(s, t, amp=amp, rate=rate, coeffs=coeffs):
            smooth = sum(c * np.cos((k + 1) * s) * np.cos((k + 1) * t) for k, c in enumerate(coeffs))
            return amp * np.exp(-rate * np.abs(s - t)) + smooth

        yield kern


def check_determinants(fast: bool = False) -> CheckResult:
    def body():
        grid = op.QuadratureGrid.gauss_legendre(0.0, 2.0, 96)
        det_err = 0.0
        for kern in random_kernels():
            D = op.discretize(kern, grid)
            # independent route: LU determinant of I + S and the plain matrix trace
            _, logdet = np.linalg.slogdet(np.eye(grid.n) + D.sym)
            direct = math.exp(logdet - float(np.trace(D.sym)))
            det_err = max(det_err, abs(op.carleman_det2(D) - direct) / direct)
        rng = np.random.default_rng(5)
        kern_err = 0.0
        for lb in (0.0, 0.7):
            p = CirParams(0.7, 2 * 0.25 / (4 * 0.7), 0.5, lambda_bar=lb)
            sg = embed_cir(p)
            T = 3.0
            s, t = rng.uniform(0, T, 200), rng.uniform(0, T, 200)
            kern_err = max(kern_err, float(np.max(np.abs(general_kernel(sg, T, s, t) - cir_kernel(p, T, s, t)))))
        cert = min(
            op.min_eigen_shifted(op.discretize(lambda s, u: cir_kernel(p, tau, s, u),
                                               op.QuadratureGrid.gauss_legendre(0.0, tau, 256),
                                               diagonal_correction=True))
            for _, _, p in cir_grid() for tau in TAU_GRID
        )
        ok = det_err <= 1e-10 and kern_err <= 1e-10 and cert > 0
        return ok, {"det2_identity_rel_err": det_err, "general_vs_cir_kernel": kern_err, "min_certificate": cert}

    return _timed(8, "determinant identities and positivity certificate", body)


CHECKS = (
    check_operator_vs_riccati,
    check_riccati_residual,
    check_expquad,
    check_potential,
    check_first_chaos,
    check_feynman,
    check_hermite,
    check_determinants,
)


def run_all(fast: bool = False, only=None, report=None) -> list[CheckResult]:
    results = []
    for i, check in enumerate(CHECKS, start=1):
        if only and i not in only:
            continue
        res = check(fast=fast)
        if report is not None:
            report(res.line())
        results.append(res)
    return results
