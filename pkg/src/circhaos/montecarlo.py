"""Monte Carlo for the squared-Gaussian model and the direct CIR scheme.

Randomness is addressed by (seed, chunk): paths are cut into fixed chunks of
``CHUNK`` paths and chunk j draws from PCG64 seeded with
SeedSequence(seed, spawn_key=(j,)).  The chunk layout does not depend on the
number of workers and results are reduced in chunk order, so threaded and
sequential runs are bitwise identical.

Over each step the OU transition and the Brownian increment are drawn
jointly and exactly:

    dW  = sqrt(h) z1
    eta = Cov(eta, dW)/h dW + sqrt(Var eta - Cov^2/h) z2
    Var eta = gamma^2 (1 - e^{-2 alpha h}) / (2 alpha),
    Cov(eta, dW) = gamma (1 - e^{-alpha h}) / alpha.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InsufficientSamples, InvalidParameters
from .model import CirParams, SqGaussParams, propagator

CHUNK = 8192
SCHEMES = ("ou_exact", "cir_euler_full_truncation")
_GRID_TOL = 1e-9


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    dt: float
    horizon: float
    seed: int = 0
    scheme: str = "ou_exact"
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 1:
            raise InvalidParameters("n_paths must be >= 1")
        if not self.dt > 0:
            raise InvalidParameters("dt must be positive")
        if self.horizon < self.dt * (1 - _GRID_TOL):
            raise InvalidParameters("horizon must be >= dt")
        if self.scheme not in SCHEMES:
            raise InvalidParameters(f"unknown scheme {self.scheme!r}")
        if self.workers < 1:
            raise InvalidParameters("workers must be >= 1")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n: int

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.stderr


def estimate(values) -> Estimate:
    """Sample mean and standard error (sample std with ddof=1 over sqrt(n))."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise InsufficientSamples("need at least two samples")
    return Estimate(float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(v.size)), int(v.size))


def chunk_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _chunks(n: int):
    return [(j, min(CHUNK, n - j * CHUNK)) for j in range((n + CHUNK - 1) // CHUNK)]


def _map_chunks(fn: Callable, n: int, workers: int) -> list:
    jobs = _chunks(n)
    if workers == 1:
        return [fn(j, m) for j, m in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def sample_normals(seed: int, n: int, k: int) -> np.ndarray:
    """n rows of k standard normals, chunk-addressed like the path simulators."""
    return np.concatenate([chunk_rng(seed, j).standard_normal((m, k)) for j, m in _chunks(n)])


# --- exact OU stepping -----------------------------------------------------

@dataclass
class _Piece:
    h: float
    decay: float
    drift: np.ndarray | None
    eta_sd: float
    eta_on_dw: float
    eta_resid: float
    sqrt_h: float


def _pieces(p: SqGaussParams, t0: float, t1: float) -> list[_Piece]:
    """Constant-coefficient sub-intervals of [t0, t1], split at breakpoints."""
    edges = [t0, *p.breakpoints_in(t0, t1), t1]
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        h = hi - lo
        mid = 0.5 * (lo + hi)
        al, ga = float(p.alpha(mid)), float(p.gamma(mid))
        k = math.exp(-al * h)
        var = ga * ga * -math.expm1(-2 * al * h) / (2 * al)
        cov = ga * -math.expm1(-al * h) / al
        resid = math.sqrt(max(var - cov * cov / h, 0.0))
        drift = None
        if p.rbar.values.ndim > 1:
            drift = (1 - k) * p.rbar_at(mid)
        out.append(_Piece(h, k, drift, math.sqrt(var), cov / h, resid, math.sqrt(h)))
    return out


def _step_plan(p: SqGaussParams, times: np.ndarray) -> list[list[_Piece]]:
    if not p.breakpoints_in(times[0], times[-1]) and p.rbar.values.ndim == 1:
        h = np.diff(times)
        if np.allclose(h, h[0], rtol=1e-12, atol=0):
            shared = _pieces(p, times[0], times[1])
            return [shared] * (len(times) - 1)
    return [_pieces(p, a, b) for a, b in zip(times[:-1], times[1:])]


def _advance(R, plan, rng, need_dw: bool, buf):
    """One grid step of the exact transition; returns the summed Brownian increment."""
    dw_total = None
    for piece in plan:
        R *= piece.decay
        if piece.drift is not None:
            R += piece.drift[:, None]
        if need_dw:
            rng.standard_normal(out=buf)
            z1, z2 = buf[0], buf[1]
            dw = z1 * piece.sqrt_h
            R += piece.eta_on_dw * dw
            R += piece.eta_resid * z2
            dw_total = dw if dw_total is None else dw_total + dw
        else:
            z = buf[0]
            rng.standard_normal(out=z)
            R += piece.eta_sd * z
    return dw_total


def _check_grid_times(times: np.ndarray, wanted) -> np.ndarray:
    idx = np.searchsorted(times, np.asarray(wanted, dtype=float) - _GRID_TOL * max(1.0, times[-1]))
    idx = np.minimum(idx, len(times) - 1)
    if np.any(np.abs(times[idx] - wanted) > 1e-7 * max(1.0, times[-1])):
        raise InvalidParameters("record times must lie on the simulation grid")
    return idx


@dataclass(frozen=True)
class PathBundle:
    """Sampled paths: ``values`` has shape (paths, len(times), dim) for R, (paths, len(times)) for r."""

    times: np.ndarray
    values: np.ndarray
    dW: np.ndarray | None = None


def simulate_ou(p: SqGaussParams, cfg: SimConfig, record_times=None, keep_increments: bool = False) -> PathBundle:
    """Exact-in-law samples of R at grid times (optionally a subset), started at p.r0_vec."""
    if cfg.scheme != "ou_exact":
        raise InvalidParameters("simulate_ou needs scheme 'ou_exact'")
    times = cfg.times
    rec = np.arange(len(times)) if record_times is None else _check_grid_times(times, record_times)
    plan = _step_plan(p, times)
    dim = p.dim

    def run(j, m):
        rng = chunk_rng(cfg.seed, j)
        R = np.repeat(p.r0_vec[:, None], m, axis=1)
        buf = np.empty((2, dim, m))
        out = np.empty((len(rec), dim, m))
        dws = np.empty((len(times) - 1, dim, m)) if keep_increments else None
        pos = 0
        if rec[0] == 0:
            out[0] = R
            pos = 1
        for k in range(len(times) - 1):
            dw = _advance(R, plan[k], rng, True, buf)
            if keep_increments:
                dws[k] = dw
            if pos < len(rec) and rec[pos] == k + 1:
                out[pos] = R
                pos += 1
        return out, dws

    parts = _map_chunks(run, cfg.n_paths, cfg.workers)
    values = np.concatenate([np.transpose(o, (2, 0, 1)) for o, _ in parts])
    dW = np.concatenate([np.transpose(d, (2, 0, 1)) for _, d in parts]) if keep_increments else None
    return PathBundle(times[rec], values, dW)


def simulate_cir_direct(p: CirParams, cfg: SimConfig, record_times=None) -> PathBundle:
    """Full-truncation Euler for dr = a(b - r)dt + c sqrt(r) dW; no integer-dimension check."""
    if cfg.scheme != "cir_euler_full_truncation":
        raise InvalidParameters("simulate_cir_direct needs scheme 'cir_euler_full_truncation'")
    times = cfg.times
    rec = np.arange(len(times)) if record_times is None else _check_grid_times(times, record_times)
    h = times[1] - times[0]
    sq = math.sqrt(h)

    def run(j, m):
        rng = chunk_rng(cfg.seed, j)
        r = np.full(m, float(p.r0))
        z = np.empty(m)
        out = np.empty((len(rec), m))
        pos = 0
        if rec[0] == 0:
            out[0] = r
            pos = 1
        for k in range(len(times) - 1):
            rng.standard_normal(out=z)
            rp = np.maximum(r, 0.0)
            r = r + p.a * (p.b - rp) * h + p.c * np.sqrt(rp) * sq * z
            if pos < len(rec) and rec[pos] == k + 1:
                out[pos] = r
                pos += 1
        return out

    parts = _map_chunks(run, cfg.n_paths, cfg.workers)
    return PathBundle(times[rec], np.concatenate([o.T for o in parts]))


@dataclass(frozen=True)
class Functionals:
    """Per-path outputs of :func:`accumulate_functionals`.

    ``V`` and ``X`` are (paths, records); ``sigma`` is the vector sigma_T at
    the horizon (paths, dim); ``Wg`` holds W^mu(g) per test function
    (paths, n_g, dim) or is None.
    """

    times: np.ndarray
    V: np.ndarray
    X: np.ndarray | None
    sigma: np.ndarray | None
    Wg: np.ndarray | None
    max_rate: float = field(default=0.0)


def accumulate_functionals(p: SqGaussParams, cfg: SimConfig, T: float | None = None, record_times=None,
                           test_functions: Sequence[Callable] = (), need_x: bool = True) -> Functionals:
    """Simulate V_t, X_t = int sigma dW, sigma_T and W(g) along exact OU paths.

    ``int r dt`` uses the trapezoid rule on the grid; the Ito integrals
    int lb R.dW and int sigma.dW use left-point sums; W(g) uses g at step
    midpoints.  With ``need_x=False``, lambda_bar = 0 and no test functions,
    only the discount factor is produced and the Brownian increments are not
    drawn (one normal per component and step instead of two).
    """
    if cfg.scheme != "ou_exact":
        raise InvalidParameters("accumulate_functionals needs scheme 'ou_exact'")
    T = cfg.horizon if T is None else float(T)
    if abs(T - cfg.horizon) > _GRID_TOL * max(1.0, T):
        cfg = SimConfig(cfg.n_paths, cfg.dt, T, cfg.seed, cfg.scheme, cfg.workers)
    times = cfg.times
    rec = _check_grid_times(times, [T] if record_times is None else record_times)
    lb = p.lambda_bar
    weight = 1.0 + lb * lb / 2.0
    need_dw = need_x or lb != 0 or len(test_functions) > 0
    plan = _step_plan(p, times)
    mids = 0.5 * (times[:-1] + times[1:])
    g_vals = np.array([np.broadcast_to(np.asarray(g(mids), float), mids.shape) for g in test_functions])
    dim = p.dim
    n_rec = len(rec)

    def run(j, m):
        rng = chunk_rng(cfg.seed, j)
        R = np.repeat(p.r0_vec[:, None], m, axis=1)
        buf = np.empty((2, dim, m))
        r_left = np.einsum("dm,dm->m", R, R)
        int_r = np.zeros(m)
        ito = np.zeros(m)
        X = np.zeros(m)
        logv = np.zeros(m)
        V_out = np.empty((n_rec, m))
        X_out = np.empty((n_rec, m)) if need_x else None
        Wg = np.zeros((len(test_functions), dim, m)) if len(test_functions) else None
        max_r = float(np.max(r_left))
        pos = 0
        if rec[0] == 0:
            V_out[0] = 1.0
            if need_x:
                X_out[0] = 0.0
            pos = 1
        for k in range(len(times) - 1):
            h = times[k + 1] - times[k]
            if need_dw:
                R_left = R.copy()
                dw = _advance(R, plan[k], rng, True, buf)
                proj = np.einsum("dm,dm->m", R_left, dw)
                if need_x:
                    X += np.exp(0.5 * logv) * proj
                if lb:
                    ito += lb * proj
                if Wg is not None:
                    Wg += g_vals[:, k, None, None] * dw[None]
            else:
                _advance(R, plan[k], rng, False, buf)
            r_right = np.einsum("dm,dm->m", R, R)
            int_r += 0.5 * h * (r_left + r_right)
            r_left = r_right
            logv = -weight * int_r - ito
            if pos < n_rec and rec[pos] == k + 1:
                V_out[pos] = np.exp(logv)
                if need_x:
                    X_out[pos] = X
                pos += 1
        max_r = max(max_r, float(np.max(r_left)))
        sigma = np.exp(0.5 * logv)[None, :] * R if need_dw else None
        return V_out, X_out, sigma, Wg, max_r

    parts = _map_chunks(run, cfg.n_paths, cfg.workers)
    V = np.concatenate([q[0].T for q in parts])
    X = np.concatenate([q[1].T for q in parts]) if need_x else None
    sigma = np.concatenate([q[2].T for q in parts]) if need_dw else None
    Wg = np.concatenate([np.transpose(q[3], (2, 0, 1)) for q in parts]) if len(test_functions) else None
    max_rate = max(q[4] for q in parts)
    if cfg.dt * max_rate > 0.05:
        warnings.warn(f"dt * max r = {cfg.dt * max_rate:.3g} exceeds 0.05; time-integral bias may be large",
                      RuntimeWarning, stacklevel=2)
    return Functionals(times[rec], V, X, sigma, Wg, max_rate)


def discount_mc(p: SqGaussParams, cfg: SimConfig) -> Estimate:
    """Monte Carlo estimate of E[V_T] (the zero-coupon price when lambda_bar = 0)."""
    f = accumulate_functionals(p, cfg, need_x=False)
    return estimate(f.V[:, -1])


def projection_samples(f: Functionals) -> np.ndarray:
    """Per-path (1/N) sum_mu sigma^mu_T W^mu(g), shape (paths, n_g)."""
    return np.einsum("pd,pgd->pg", f.sigma, f.Wg) / f.sigma.shape[1]


def discrete_discount_expectation(p: SqGaussParams, T: float, n_steps: int) -> float:
    """Exact E[exp(-sum_k w_k |R_{t_k}|^2)] for the trapezoid weights on a uniform grid.

    Constant coefficients and rbar = 0 only.  Per component R(t_k) is Gaussian
    with mean K(t_k,0) R0 and covariance
    gamma^2/(2 alpha) e^{-alpha|t_j - t_k|} (1 - e^{-2 alpha min(t_j, t_k)}), so the
    expectation is a finite-dimensional Gaussian integral.  This isolates
    the time-discretization bias of the Monte Carlo discount factor.
    """
    if p.alpha.values.size != 1 or p.gamma.values.size != 1 or p.rbar.values.ndim > 1:
        raise InvalidParameters("needs constant coefficients with rbar = 0")
    al, ga = float(p.alpha.values[0]), float(p.gamma.values[0])
    t = np.linspace(0.0, T, n_steps + 1)
    w = np.full(t.size, T / n_steps)
    w[[0, -1]] *= 0.5
    lo = np.minimum.outer(t, t)
    cov = ga * ga / (2 * al) * np.exp(-al * np.abs(t[:, None] - t[None, :])) * -np.expm1(-2 * al * lo)
    sw = np.sqrt(w)
    M = np.eye(t.size) + 2.0 * sw[:, None] * cov * sw[None, :]
    sign, logdet = np.linalg.slogdet(M)
    decay = np.asarray(propagator(p, t, np.zeros_like(t)))
    log = 0.0
    for r0 in p.r0_vec:
        m = sw * decay * r0
        log += -0.5 * logdet - float(m @ np.linalg.solve(M, m))
    return math.exp(log)


def dump_paths(p: SqGaussParams, cfg: SimConfig, stream, max_paths: int = 100) -> None:
    """CSV ``path_id,t,r,V,X_partial`` for at most ``max_paths`` paths."""
    n = min(cfg.n_paths, max_paths)
    small = SimConfig(n, cfg.dt, cfg.horizon, cfg.seed, cfg.scheme, 1)
    bundle = simulate_ou(p, small, keep_increments=True)
    R, dW = bundle.values, bundle.dW
    r = np.einsum("ptd,ptd->pt", R, R)
    h = np.diff(bundle.times)
    lb = p.lambda_bar
    int_r = np.concatenate([np.zeros((n, 1)), np.cumsum(0.5 * h * (r[:, :-1] + r[:, 1:]), axis=1)], axis=1)
    proj = np.einsum("ptd,ptd->pt", R[:, :-1], dW)
    ito = np.concatenate([np.zeros((n, 1)), np.cumsum(lb * proj, axis=1)], axis=1)
    logv = -(1 + lb * lb / 2) * int_r - ito
    X = np.concatenate([np.zeros((n, 1)), np.cumsum(np.exp(0.5 * logv[:, :-1]) * proj, axis=1)], axis=1)
    V = np.exp(logv)
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["path_id", "t", "r", "V", "X_partial"])
    for i in range(n):
        for k, t in enumerate(bundle.times):
            w.writerow([i, repr(float(t)), repr(float(r[i, k])), repr(float(V[i, k])), repr(float(X[i, k]))])
