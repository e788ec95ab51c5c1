"""Command-line front end.

Every subcommand takes model/grid/Monte Carlo flags and an optional
``--config`` JSON file with top-level sections ``model``, ``grid``, ``mc``
and ``task``.  A flag given on the command line beats the file, which beats
the built-in default.  Exit codes: 0 success, 1 computation or validation
failure, 2 input error.  Errors go to stderr as ``{"error": <class name>, ...}``.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
import warnings

import numpy as np

from . import chaos, expquad, montecarlo as mc, operator as op, pricing, validate
from .errors import (
    CirChaosError,
    InvalidParameters,
    InvalidTimeOrder,
    OutOfDomain,
)
from .model import CirParams, embed_cir


class ConfigError(CirChaosError, ValueError):
    pass


INPUT_ERRORS = (ConfigError, InvalidParameters, InvalidTimeOrder, OutOfDomain)

# section -> key -> default
DEFAULTS = {
    "model": {"a": 0.1, "b": 0.1, "c": 0.2, "lambda_bar": 0.0, "r0": 0.0},
    "grid": {"nodes": 256, "rule": "gauss_legendre"},
    "mc": {"n_paths": 100000, "dt": 1e-3, "seed": 0, "workers": 1},
}
TASK_DEFAULTS = {
    "price": {"t": 0.0, "T": None, "method": "riccati_closed"},
    "curve": {"t": 0.0, "maturities": None},
    "chaos": {"T": 1.0, "order": 1, "times": None, "tuples": None},
    "expquad": {"modes": [], "t0": 0.0, "T": 1.0},
    "simulate": {"T": 1.0, "scheme": "ou_exact", "paths_csv": None},
    "validate": {"fast": False, "only": None},
}
# flag dest -> (section, key)
FLAG_MAP = {
    "a": ("model", "a"), "b": ("model", "b"), "c": ("model", "c"),
    "lambda_bar": ("model", "lambda_bar"), "r0": ("model", "r0"),
    "nodes": ("grid", "nodes"), "rule": ("grid", "rule"),
    "n_paths": ("mc", "n_paths"), "dt": ("mc", "dt"), "seed": ("mc", "seed"), "workers": ("mc", "workers"),
}


def _num_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (sections model, grid, mc, task)")
    common.add_argument("--out", help="write the result here instead of stdout")
    g = common.add_argument_group("model")
    for name in ("a", "b", "c", "r0"):
        g.add_argument(f"--{name}", type=float, default=None)
    g.add_argument("--lambda-bar", dest="lambda_bar", type=float, default=None)
    q = common.add_argument_group("grid")
    q.add_argument("--nodes", type=int, default=None)
    q.add_argument("--rule", choices=("gauss_legendre", "trapezoid"), default=None)
    m = common.add_argument_group("monte carlo")
    m.add_argument("--n-paths", dest="n_paths", type=int, default=None)
    m.add_argument("--dt", type=float, default=None)
    m.add_argument("--seed", type=int, default=None)
    m.add_argument("--workers", type=int, default=None)

    parser = argparse.ArgumentParser(prog="circhaos", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("price", parents=[common], help="zero-coupon bond price")
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--method", choices=("operator", "riccati", "riccati_closed", "riccati_ode", "all"),
                   default=None)

    p = sub.add_parser("curve", parents=[common], help="yield curve CSV")
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--maturities", type=_num_list, default=None, help="comma-separated maturities")

    p = sub.add_parser("chaos", parents=[common], help="chaos coefficients of sigma_T (r0 = 0)")
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--times", type=_num_list, default=None,
                   help="time points; rows are all ascending tuples of size ORDER")
    p.add_argument("--tuple", dest="tuples", type=_num_list, action="append", default=None,
                   help="explicit time tuple (repeatable)")

    p = sub.add_parser("expquad", parents=[common], help="finite-rank E[exp(-Y)] three ways")
    p.add_argument("--mode", dest="modes", type=_num_list, action="append", default=None,
                   help="mode as b,c (repeatable)")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo estimates")
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--scheme", choices=mc.SCHEMES, default=None)
    p.add_argument("--paths-csv", dest="paths_csv", default=None, help="also dump up to 100 paths here")

    p = sub.add_parser("validate", parents=[common], help="run the acceptance suite")
    p.add_argument("--fast", action="store_true", default=None)
    p.add_argument("--only", type=lambda s: [int(x) for x in s.split(",")], default=None,
                   help="comma-separated criterion numbers")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the JSON file and explicit flags (flag > file > default)."""
    cfg = {k: dict(v) for k, v in DEFAULTS.items()}
    cfg["task"] = dict(TASK_DEFAULTS[args.command])
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        for section, values in data.items():
            if section not in cfg:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(values, dict):
                raise ConfigError(f"section {section!r} must be an object")
            for key, value in values.items():
                if key not in cfg[section]:
                    raise ConfigError(f"unknown key {section}.{key}")
                cfg[section][key] = value
    for dest, value in vars(args).items():
        if value is None or dest in ("command", "config", "out"):
            continue
        if dest in FLAG_MAP:
            section, key = FLAG_MAP[dest]
            cfg[section][key] = value
        elif dest in cfg["task"]:
            cfg["task"][dest] = value
    return cfg


def _model(cfg) -> CirParams:
    m = cfg["model"]
    try:
        return CirParams(float(m["a"]), float(m["b"]), float(m["c"]), float(m["lambda_bar"]), float(m["r0"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CirChaosError):
            raise
        raise ConfigError(f"bad model section: {exc}") from exc


def _json(obj) -> str:
    # json uses repr for floats, which round-trips exactly
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def cmd_price(cfg) -> tuple[int, str]:
    p = _model(cfg)
    task = cfg["task"]
    if task["T"] is None:
        raise ConfigError("price needs T")
    t, T = float(task["t"]), float(task["T"])
    if not T > t:
        raise InvalidTimeOrder(f"need t < T, got t={t}, T={T}")
    nodes = int(cfg["grid"]["nodes"])
    method = {"riccati": "riccati_closed"}.get(task["method"], task["method"])
    if method != "all":
        return 0, _json(pricing.bond_price(p, t, T, p.r0, method, nodes).as_dict())
    quotes = {m: pricing.bond_price(p, t, T, p.r0, m, nodes) for m in pricing.METHODS}
    rel = {}
    for i, m1 in enumerate(pricing.METHODS):
        for m2 in pricing.METHODS[i + 1:]:
            rel[f"{m1}_vs_{m2}"] = abs(quotes[m1].price - quotes[m2].price) / quotes[m2].price
    out = {m: q.as_dict() for m, q in quotes.items()}
    out["rel_err"] = rel
    return 0, _json(out)


def cmd_curve(cfg) -> tuple[int, str]:
    p = _model(cfg)
    task = cfg["task"]
    mats = task["maturities"]
    if not mats:
        raise ConfigError("maturity list is empty")
    rows = pricing.curve_rows(p, float(task["t"]), p.r0, [float(x) for x in mats], int(cfg["grid"]["nodes"]))
    buf = io.StringIO()
    pricing.dump_curve(rows, buf)
    return 0, buf.getvalue()


def cmd_chaos(cfg) -> tuple[int, str]:
    import itertools

    p = _model(cfg)
    task = cfg["task"]
    order = int(task["order"])
    if order < 1 or order > 11:
        raise ConfigError("order must be between 1 and 11")
    tuples = [list(map(float, tp)) for tp in (task["tuples"] or [])]
    if task["times"]:
        tuples += [list(c) for c in itertools.combinations(sorted(map(float, task["times"])), order)]
    if not tuples:
        raise ConfigError("chaos needs --times or --tuple")
    if any(len(tp) != order for tp in tuples):
        raise ConfigError(f"every tuple must have {order} times")
    T = float(task["T"])
    if order % 2 == 0:
        print(f"note: order {order} is even; these coefficients vanish identically", file=sys.stderr)
        if p.r0 != 0:
            chaos.cir_chaos_coeff(p, T, [0.0])  # raises NonZeroInitialRate
        values = [0.0] * len(tuples)
    else:
        expansion = chaos.CirChaosExpansion(p, T, int(cfg["grid"]["nodes"]))
        values = [expansion.coeff(tp) for tp in tuples]
    buf = io.StringIO()
    chaos.dump_coefficients(zip(tuples, values), buf)
    return 0, buf.getvalue()


def cmd_expquad(cfg) -> tuple[int, str]:
    task = cfg["task"]
    try:
        modes = [(float(b), float(c)) for b, c in task["modes"]]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"modes must be (b, c) pairs: {exc}") from exc
    grid = op.QuadratureGrid.make(float(task["t0"]), float(task["T"]), int(cfg["grid"]["nodes"]),
                                  cfg["grid"]["rule"])
    m = cfg["mc"]
    analytic, operator_value, est = expquad.oracle_crosscheck(modes, grid, int(m["n_paths"]), int(m["seed"]))
    return 0, _json({"analytic": analytic, "operator": operator_value, "mc_mean": est.mean,
                     "mc_stderr": est.stderr})


def cmd_simulate(cfg) -> tuple[int, str]:
    p = _model(cfg)
    task, m = cfg["task"], cfg["mc"]
    sim = mc.SimConfig(int(m["n_paths"]), float(m["dt"]), float(task["T"]), int(m["seed"]), task["scheme"],
                       int(m["workers"]))
    if sim.scheme == "cir_euler_full_truncation":
        bundle = mc.simulate_cir_direct(p, sim, record_times=[sim.horizon])
        r = bundle.values[:, -1]
        e = mc.estimate(r)
        out = {"scheme": sim.scheme, "T": sim.horizon, "mean_r": e.mean, "mean_r_stderr": e.stderr,
               "var_r": float(np.var(r, ddof=1)), "n": e.n}
        return 0, _json(out)
    sg = embed_cir(p)
    f = mc.accumulate_functionals(sg, sim)
    V, X = f.V[:, -1], f.X[:, -1]
    ev, ex, ex2 = mc.estimate(V), mc.estimate(X), mc.estimate(X**2)
    gap = mc.estimate(X**2 - (1 - V))
    out = {"scheme": sim.scheme, "T": sim.horizon, "E_V": ev.mean, "E_V_stderr": ev.stderr,
           "E_X": ex.mean, "E_X_stderr": ex.stderr, "E_X2": ex2.mean, "E_X2_stderr": ex2.stderr,
           "E_X2_minus_1_minus_V": gap.mean, "gap_stderr": gap.stderr, "n": ev.n}
    if task["paths_csv"]:
        with open(task["paths_csv"], "w", newline="") as fh:
            mc.dump_paths(sg, sim, fh)
    return 0, _json(out)


def cmd_validate(cfg) -> tuple[int, str]:
    task = cfg["task"]
    lines = []

    def report(line):
        lines.append(line)
        print(line, file=sys.stderr, flush=True)

    results = validate.run_all(fast=bool(task["fast"]), only=task["only"], report=report)
    ok = all(r.passed for r in results)
    lines.append(f"{'ALL PASS' if ok else 'FAILURES'}: {sum(r.passed for r in results)}/{len(results)}")
    return (0 if ok else 1), "\n".join(lines) + "\n"


COMMANDS = {"price": cmd_price, "curve": cmd_curve, "chaos": cmd_chaos, "expquad": cmd_expquad,
            "simulate": cmd_simulate, "validate": cmd_validate}


def _fail(exc: Exception, code: int) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            code, text = COMMANDS[args.command](cfg)
    except INPUT_ERRORS as exc:
        return _fail(exc, 2)
    except CirChaosError as exc:
        return _fail(exc, 1)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(exc, 1)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
