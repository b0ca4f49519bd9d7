import json
import math

import pytest

from tandem_overflow.cli import main
from tandem_overflow.model import NetworkParams
from tandem_overflow.oracle import read_binary, solve_exact


@pytest.fixture
def p4(tmp_path):
    path = tmp_path / "p4.json"
    path.write_text(json.dumps({"lambda": "1/18", "mu": ["3/18", "7/18", "2/18", "5/18"]}))
    return str(path)


@pytest.fixture
def p3(tmp_path):
    path = tmp_path / "p3.json"
    path.write_text(json.dumps({"lambda": "1/10", "mu": ["35/100", "30/100", "25/100"]}))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


class TestApprox:
    def test_paper_point(self, capsys, p4):
        rep = run_json(capsys, "approx", "--params", p4, "--n", "60", "--x", "1,0,0,0")
        assert rep["probability"] == pytest.approx(5.551115122913475e-18, rel=1e-12)
        assert rep["W_n"] == pytest.approx(-math.log(5.551115122913475e-18) / 60)

    def test_boundary_y_rational(self, capsys, p4):
        rep = run_json(capsys, "approx", "--params", p4, "--mode", "rational", "--y", "3,1,1,1")
        assert rep["P_tau_finite"]["exact"] == "1/1"
        assert rep["on_boundary"]

    def test_terms_csv(self, capsys, p4, tmp_path):
        path = tmp_path / "terms.csv"
        run_json(capsys, "approx", "--params", p4, "--y", "5,1,0,2", "--terms", str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "d,subset,c,beta,alpha,value"
        assert len(lines) == 1 + 2 ** 4 - 1

    def test_equal_rates_exit_2(self, capsys, tmp_path):
        path = tmp_path / "eq.json"
        path.write_text(json.dumps({"lambda": "1/10", "mu": ["9/20", "9/20"]}))
        code, _out, err = run(capsys, "approx", "--params", str(path), "--y", "4,1")
        assert code == 2
        assert "distinct" in err

    def test_missing_params_exit_2(self, capsys):
        code, _out, err = run(capsys, "approx", "--n", "5", "--x", "1,0")
        assert code == 2 and "--params" in err

    def test_unstable_exit_2(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"lambda": "1/2", "mu": ["1/4", "1/4"]}))
        code, _out, err = run(capsys, "approx", "--params", str(path), "--y", "4,1")
        assert code == 2 and "unstable" in err

    def test_rational_needs_exact_rates(self, capsys, tmp_path):
        path = tmp_path / "f.json"
        path.write_text(json.dumps({"lambda": 0.1, "mu": [0.5, 0.4]}))
        code, _out, _err = run(capsys, "approx", "--params", str(path), "--mode", "rational", "--y", "4,1")
        assert code == 2

    def test_params_round_trip(self, capsys, p4):
        rep = run_json(capsys, "approx", "--params", p4, "--mode", "rational", "--y", "4,1,1,1")
        assert NetworkParams.from_dict(rep["params"]) == NetworkParams.from_rates("1/18", ["3/18", "7/18", "2/18", "5/18"])


class TestExact:
    def test_value_and_files(self, capsys, p3, tmp_path):
        csv_path, bin_path = tmp_path / "g.csv", tmp_path / "g.bin"
        rep = run_json(
            capsys, "exact", "--params", p3, "--n", "8", "--x", "2,1,0", "--csv", str(csv_path), "--binary", str(bin_path)
        )
        grid = solve_exact(NetworkParams.from_rates("1/10", ["35/100", "3/10", "25/100"]), 8)
        assert rep["V_n"] == pytest.approx(grid.V((2, 1, 0)), rel=1e-12)
        assert rep["residual"] <= 1e-12
        assert csv_path.read_text().splitlines()[0] == "x1,x2,x3,value"
        assert read_binary(bin_path)[:2] == (3, 8)

    def test_budget_exit_4(self, capsys, p4, monkeypatch):
        monkeypatch.setenv("TANDEM_OVERFLOW_MAX_STATES", "1000")
        code, _out, err = run(capsys, "exact", "--params", p4, "--n", "60")
        assert code == 4 and "budget" in err


class TestSimulate:
    def test_byte_stable(self, capsys, p3):
        argv = ("simulate", "--params", p3, "--n", "10", "--x", "1,0,0", "--samples", "2000", "--seed", "5")
        a = run(capsys, *argv)
        b = run(capsys, *argv)
        assert a == b and a[0] == 0
        rep = json.loads(a[1])
        assert rep["method"] == "is" and rep["samples"] == 2000 and rep["seed"] == 5

    def test_plain(self, capsys, p3):
        rep = run_json(capsys, "simulate", "--params", p3, "--n", "6", "--x", "1,0,0", "--samples", "500", "--method", "mc")
        assert rep["method"] == "plain"
        assert 0 <= rep["estimate"] <= 1

    def test_threads_must_be_positive(self, capsys, p3):
        code, _o, _e = run(capsys, "--threads", "0", "simulate", "--params", p3, "--n", "6", "--x", "1,0,0")
        assert code == 2


class TestBounds:
    def test_fields(self, capsys, p4):
        rep = run_json(capsys, "bounds", "--params", p4, "--n", "20", "--x", "2,1,0,0")
        assert rep["r"] == pytest.approx(0.75)
        assert rep["gamma"][0] == 1
        assert rep["in_Rbar"] is True
        assert 0 < rep["lower_bound"] < rep["upper_bound_Tn"]


class TestVerify:
    def test_system(self, capsys):
        rep = run_json(capsys, "verify", "system", "--d", "6")
        assert rep["passed"] and set(rep["systems"]) == {str(d) for d in range(1, 7)}

    def test_formula(self, capsys):
        assert run_json(capsys, "verify", "formula", "--d", "3", "--grid", "8")["passed"]

    def test_bounds(self, capsys):
        assert run_json(capsys, "verify", "bounds", "--d", "3")["passed"]

    def test_coupling(self, capsys):
        assert run_json(capsys, "verify", "coupling", "--d", "3", "--paths", "500", "--n", "12")["passed"]

    def test_failure_exit_3(self, capsys):
        code, out, _err = run(capsys, "verify", "formula", "--d", "3", "--grid", "6", "--tol", "-1")
        assert code == 3
        assert json.loads(out)["passed"] is False


class TestSweep:
    def test_csv(self, capsys, p3, tmp_path):
        path = tmp_path / "s.csv"
        code, _out, err = run(capsys, "sweep", "--params", p3, "--n", "8", "--slice", "1,2", "--out", str(path))
        assert code == 0, err
        lines = path.read_text().splitlines()
        assert lines[0].startswith("#")
        assert lines[1] == "x,P,f,V_n,W_n,rel_err,prob_rel_err,bound,in_Rbar"
        assert len(lines) == 2 + (9 * 10 // 2 - 1)
        assert not any(line.startswith("0 0 0,") for line in lines)

    def test_bad_slice(self, capsys, p3):
        code, _o, _e = run(capsys, "sweep", "--params", p3, "--n", "8", "--slice", "1,1")
        assert code == 2


def test_couple(capsys, p4):
    rep = run_json(capsys, "couple", "--params", p4, "--n", "10", "--x", "1,1,0,0", "--paths", "200")
    assert rep["ok"] and not any(rep["violations"].values())
