from __future__ import annotations

import csv
import io
import json

import pytest

from circhaos import pricing
from circhaos.cli import main
from circhaos.model import CirParams

BASE = ["--a", "0.1", "--b", "0.2", "--c", "0.2"]  # N = 2


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def error_name(err: str) -> str:
    return json.loads(err.strip().splitlines()[-1])["error"]


def test_price_riccati_example(capsys):
    code, out, _ = run(capsys, "price", "--a", "0.1", "--b", "0.1", "--c", "0.2", "--t", "0", "--T", "1",
                       "--r0", "0.04", "--method", "riccati")
    assert code == 0
    q = json.loads(out)
    assert 0 < q["price"] < 1
    assert q["beta"] == pytest.approx(0.945637, abs=1e-6)
    assert q["method"] == "riccati_closed"


def test_price_equal_times_is_input_error(capsys):
    code, _, err = run(capsys, "price", *BASE, "--t", "1", "--T", "1")
    assert code == 2
    assert error_name(err) == "InvalidTimeOrder"


def test_price_all_methods(capsys):
    code, out, _ = run(capsys, "price", *BASE, "--T", "2", "--r0", "0.03", "--method", "all")
    assert code == 0
    data = json.loads(out)
    assert set(pricing.METHODS) <= set(data)
    assert all(v <= 1e-4 for v in data["rel_err"].values())


def test_price_all_needs_integer_dimension(capsys):
    code, _, err = run(capsys, "price", "--a", "0.1", "--b", "0.1", "--c", "0.2", "--T", "1", "--method", "all")
    assert code == 1
    assert error_name(err) == "NonIntegerDimension"


def test_invalid_parameter_is_input_error(capsys):
    code, _, err = run(capsys, "price", "--a", "-1", "--T", "1")
    assert code == 2
    assert error_name(err) == "InvalidParameters"


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"a": 0.5, "b": 0.06, "c": 0.2, "r0": 0.02}, "task": {"T": 3.0}}))
    # file beats default for b and r0, flag beats file for a, default supplies t and method
    code, out, _ = run(capsys, "price", "--config", str(cfg), "--a", "1.0")
    assert code == 0
    q = json.loads(out)
    expect = pricing.bond_price_riccati_closed(CirParams(1.0, 0.06, 0.2), 0.0, 3.0, 0.02)
    assert q["price"] == expect.price
    assert q["t"] == 0.0 and q["T"] == 3.0 and q["r_t"] == 0.02


@pytest.mark.parametrize("content", ["{not json", json.dumps({"model": {"alpha": 1}}),
                                     json.dumps({"extra": {}}), json.dumps([1, 2])])
def test_corrupted_config_exits_2(tmp_path, capsys, content):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(content)
    code, _, err = run(capsys, "price", "--config", str(cfg), "--T", "1")
    assert code == 2
    assert error_name(err) == "ConfigError"


def test_missing_config_exits_2(tmp_path, capsys):
    code, _, _ = run(capsys, "price", "--config", str(tmp_path / "nope.json"), "--T", "1")
    assert code == 2


def test_curve_rows_and_schema(capsys):
    mats = ",".join(str(0.5 * (i + 1)) for i in range(20))
    code, out, _ = run(capsys, "curve", *BASE, "--r0", "0.04", "--maturities", mats)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert list(rows[0]) == pricing.CURVE_HEADER
    assert len(rows) == 20
    assert all(float(r["rel_err"]) <= 1e-4 for r in rows)


def test_curve_yields_head_for_asymptote(capsys):
    p = CirParams(0.5, 0.06, 0.2)
    code, out, _ = run(capsys, "curve", "--a", "0.5", "--b", "0.06", "--c", "0.2", "--r0", "0.01",
                       "--maturities", "1,5,20,60")
    assert code == 0
    gaps = [abs(float(r["yield"]) - pricing.long_yield(p)) for r in csv.DictReader(io.StringIO(out))]
    assert gaps == sorted(gaps, reverse=True)


def test_curve_empty_maturities_exits_2(capsys):
    code, _, _ = run(capsys, "curve", *BASE, "--maturities", "")
    assert code == 2


def test_chaos_order_one_ten_points(capsys):
    times = ",".join(str(0.1 * i) for i in range(10))
    code, out, _ = run(capsys, "chaos", *BASE, "--nodes", "64", "--order", "1", "--times", times)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "t1,f_value"
    assert len(lines) == 11


def test_chaos_even_order_zero_with_note(capsys):
    code, out, err = run(capsys, "chaos", *BASE, "--order", "2", "--times", "0.1,0.5,0.9")
    assert code == 0
    assert "even" in err
    rows = list(csv.reader(io.StringIO(out)))[1:]
    assert len(rows) == 3 and all(float(r[-1]) == 0.0 for r in rows)


def test_chaos_permuted_tuple_matches(capsys):
    code, out, _ = run(capsys, "chaos", *BASE, "--nodes", "64", "--order", "3",
                       "--tuple", "0.2,0.5,0.9", "--tuple", "0.9,0.2,0.5")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))[1:]
    assert rows[0] == rows[1]
    assert float(rows[0][-1]) != 0.0


def test_chaos_nonzero_rate_exits_1(capsys):
    code, _, err = run(capsys, "chaos", *BASE, "--r0", "0.01", "--order", "1", "--times", "0.5")
    assert code == 1
    assert error_name(err) == "NonZeroInitialRate"


def test_expquad_examples(capsys):
    code, out, _ = run(capsys, "expquad", "--mode", "0,1", "--n-paths", "20000", "--nodes", "32")
    assert code == 0
    data = json.loads(out)
    assert data["analytic"] == pytest.approx(1.1658, abs=1e-4)
    assert data["operator"] == pytest.approx(data["analytic"], rel=1e-8)
    code, out, _ = run(capsys, "expquad", "--n-paths", "100")
    assert json.loads(out)["analytic"] == 1.0 and json.loads(out)["mc_mean"] == 1.0


def test_expquad_out_of_range_mode(capsys):
    code, _, err = run(capsys, "expquad", "--mode", "0,-1.5", "--n-paths", "100")
    assert code == 1
    assert error_name(err) == "ModeOutOfRange"


def test_simulate_and_paths_csv(tmp_path, capsys):
    paths = tmp_path / "paths.csv"
    code, out, _ = run(capsys, "simulate", "--a", "0.5", "--b", "0.04", "--c", "0.2", "--n-paths", "300",
                       "--dt", "0.1", "--T", "1", "--paths-csv", str(paths))
    assert code == 0
    data = json.loads(out)
    assert 0 < data["E_V"] < 1 and data["n"] == 300
    lines = paths.read_text().splitlines()
    assert lines[0] == "path_id,t,r,V,X_partial" and len(lines) == 1 + 100 * 11


def test_simulate_direct_scheme(capsys):
    code, out, _ = run(capsys, "simulate", "--a", "1", "--b", "0.04", "--c", "0.2", "--n-paths", "500",
                       "--dt", "0.01", "--scheme", "cir_euler_full_truncation")
    assert code == 0
    assert json.loads(out)["scheme"] == "cir_euler_full_truncation"


def test_reruns_are_byte_identical(tmp_path, capsys):
    outs = []
    for i in range(2):
        target = tmp_path / f"run{i}.json"
        assert main(["simulate", *BASE, "--n-paths", "1000", "--dt", "0.05", "--seed", "3", "--workers", str(i + 1),
                     "--out", str(target)]) == 0
        outs.append(target.read_bytes())
    assert outs[0] == outs[1]


def test_validate_fast_subset(capsys):
    code, out, _ = run(capsys, "validate", "--fast", "--only", "6,7,8")
    assert code == 0
    lines = out.splitlines()
    assert [line.split()[0] for line in lines[:3]] == ["PASS"] * 3
    assert lines[-1].startswith("ALL PASS")


def test_unknown_subcommand_exits_2(capsys):
    assert main(["serve"]) == 2
