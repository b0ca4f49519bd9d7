import math

import numpy as np
import pytest

from tandem_overflow.model import NetworkParams, step_x
from tandem_overflow.oracle import (
    BudgetError,
    Ranker,
    count_states,
    gamblers_ruin,
    log_decay,
    read_binary,
    solve_exact,
    solve_y_bracket,
)
from tandem_overflow.tandem_formula import prob_tau_finite


def d2():
    return NetworkParams.from_rates("2/10", ["5/10", "3/10"])


def dense_solve(params, n):
    """Independent dense solve over an explicit state list."""
    p = params.as_float()
    states = [(a, b) for a in range(n + 1) for b in range(n + 1 - a)]
    index = {s: i for i, s in enumerate(states)}
    A = np.eye(len(states))
    rhs = np.zeros(len(states))
    for s, i in index.items():
        if sum(s) == n:
            rhs[i] = 1.0
            continue
        if sum(s) == 0:
            continue
        for inc in p.increments():
            A[i, index[step_x(p, s, inc)]] -= inc.prob
    h = np.linalg.solve(A, rhs)
    return {s: h[i] for s, i in index.items()}


class TestRanker:
    def test_bijection(self):
        rk = Ranker(3, 7)
        assert len(rk.states) == count_states(3, 7)
        assert (rk.rank(rk.states) == np.arange(rk.size)).all()
        assert rk.index((7, 0, 0)) == rk.rank(np.array([[7, 0, 0]]))[0]

    def test_budget(self, monkeypatch):
        monkeypatch.setenv("TANDEM_OVERFLOW_MAX_STATES", "100")
        with pytest.raises(BudgetError):
            solve_exact(d2(), 20)


class TestSolveExact:
    def test_boundary_and_origin(self, d3):
        g = solve_exact(d3, 9)
        S = g.ranker.states.sum(axis=1)
        assert (g.values[S == 9] == 1).all()
        assert g.value((0, 0, 0)) == 0
        assert ((g.values >= 0) & (g.values <= 1)).all()
        assert g.residual <= 1e-12

    @pytest.mark.parametrize("n", [1, 5, 50, 200])
    def test_d1_gamblers_ruin(self, n):
        p = NetworkParams.from_rates("1/4", ["3/4"])
        g = solve_exact(p, n)
        for x in range(n + 1):
            assert g.value((x,)) == pytest.approx(gamblers_ruin(0.25, 0.75, n, x), rel=1e-12, abs=1e-300)

    def test_gamblers_ruin_textbook(self):
        lam, mu, n, x = 0.3, 0.7, 12, 5
        q = mu / lam
        assert gamblers_ruin(lam, mu, n, x) == pytest.approx((1 - q ** x) / (1 - q ** n), rel=1e-13)
        assert gamblers_ruin(0.5, 0.5, 10, 3) == pytest.approx(0.3)

    @pytest.mark.parametrize("n", [4, 8, 12])
    def test_d2_matches_dense(self, n):
        g = solve_exact(d2(), n)
        ref = dense_solve(d2(), n)
        for s, v in ref.items():
            assert g.value(s) == pytest.approx(v, rel=1e-12, abs=1e-15)

    def test_gs_matches_direct(self, d3):
        a = solve_exact(d3, 10, method="gs")
        b = solve_exact(d3, 10, method="direct")
        assert np.allclose(a.values, b.values, rtol=1e-11, atol=1e-16)

    def test_monotone_in_first_coordinate(self, d3):
        g = solve_exact(d3, 12)
        for x in g.ranker.states:
            if x.sum() < 12:
                up = x.copy()
                up[0] += 1
                assert g.value(up) >= g.value(x) * (1 - 1e-12)

    def test_monotone_in_n(self, d3):
        a, b = solve_exact(d3, 8), solve_exact(d3, 9)
        for x in a.ranker.states:
            if 0 < x.sum() < 8:
                assert b.value(x) < a.value(x)

    def test_more_sweeps_do_not_move_values(self, d3):
        a = solve_exact(d3, 10, tol=1e-13)
        b = solve_exact(d3, 10, tol=1e-13, init=a.values)
        assert np.max(np.abs(a.values - b.values)) <= 1e-13

    def test_rejects_bad_n(self, d3):
        with pytest.raises(ValueError):
            solve_exact(d3, 0)


class TestIO:
    def test_binary_round_trip(self, d3, tmp_path):
        g = solve_exact(d3, 6)
        path = tmp_path / "grid.bin"
        g.to_binary(path)
        d, n, states, values = read_binary(path)
        assert (d, n) == (3, 6)
        assert (states == g.ranker.states).all()
        assert (values == g.values).all()
        assert path.stat().st_size == 8 + 8 * count_states(3, 6)

    def test_csv_round_trip(self, d3, tmp_path):
        g = solve_exact(d3, 5)
        path = tmp_path / "grid.csv"
        g.to_csv(path)
        rows = path.read_text().splitlines()
        assert rows[0] == "x1,x2,x3,value"
        assert len(rows) == 1 + count_states(3, 5)
        parsed = np.array([float(r.split(",")[-1]) for r in rows[1:]])
        assert (parsed == g.values).all()


class TestBracket:
    def test_boundary(self, d3):
        assert solve_y_bracket(d3, (3, 1, 2), 10) == (1.0, 1.0)

    def test_width_decreases(self):
        p = NetworkParams.from_rates(1, [7, 4], normalize=True)
        lo1, hi1 = solve_y_bracket(p, (6, 2), 20)
        lo2, hi2 = solve_y_bracket(p, (6, 2), 40)
        assert hi2 - lo2 < hi1 - lo1
        assert lo1 <= lo2 <= prob_tau_finite(p.as_float(), (6, 2)) <= hi2 <= hi1

    def test_far_value_one_is_wider(self, d3):
        lo, hi = solve_y_bracket(d3, (5, 1, 1), 12)
        lo1, hi1 = solve_y_bracket(d3, (5, 1, 1), 12, upper_far="one")
        assert lo == lo1 and hi <= hi1

    def test_rejects_outside_B(self, d3):
        with pytest.raises(ValueError):
            solve_y_bracket(d3, (1, 1, 1), 10)


class TestLogDecay:
    def test_top_boundary(self, d3):
        assert log_decay(d3, 8, (4, 4, 0)) == (0.0, 0.0)

    def test_d1_limit(self):
        p = NetworkParams.from_rates("1/4", ["3/4"])
        target = -math.log(1 / 3)
        errs = [abs(log_decay(p, n, (1,))[0] - target) for n in (10, 40, 160)]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 0.01

    def test_origin_rejected(self, d3):
        with pytest.raises(ValueError):
            log_decay(d3, 8, (0, 0, 0))
