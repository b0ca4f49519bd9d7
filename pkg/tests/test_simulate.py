import numpy as np
import pytest

from tandem_overflow.bounds import default_r
from tandem_overflow.model import NetworkParams
from tandem_overflow.oracle import solve_exact
from tandem_overflow.simulate import (
    Approximation,
    coupled_run,
    is_estimate,
    is_weighted_mass,
    mc_estimate,
    supermartingale_check,
)
from tandem_overflow.tandem_formula import approx_prob_x


@pytest.fixture(scope="module")
def d2():
    return NetworkParams.from_rates("2/10", ["5/10", "3/10"])


@pytest.fixture(scope="module")
def d2_value(d2):
    return solve_exact(d2, 8).value((1, 0))


class TestMonteCarlo:
    def test_on_top_boundary(self, d2):
        rep = mc_estimate(d2, 8, (5, 3), 100)
        assert rep.estimate == 1 and rep.std_error == 0 and rep.hit_count == 100

    def test_ci_is_estimate_pm_196_se(self, d2):
        rep = mc_estimate(d2, 8, (1, 0), 1000, seed=3)
        assert rep.ci95 == pytest.approx((rep.estimate - 1.96 * rep.std_error, rep.estimate + 1.96 * rep.std_error))
        assert 0 <= rep.estimate <= 1

    def test_within_four_se_of_oracle(self, d2, d2_value):
        inside = 0
        for seed in range(20):
            rep = mc_estimate(d2, 8, (1, 0), 20000, seed=seed)
            inside += abs(rep.estimate - d2_value) <= 4 * rep.std_error
        assert inside >= 19

    def test_std_error_scaling(self, d2):
        a = mc_estimate(d2, 8, (1, 0), 40000, seed=1)
        b = mc_estimate(d2, 8, (1, 0), 160000, seed=1)
        assert b.std_error / a.std_error == pytest.approx(0.5, rel=0.2)

    def test_reproducible(self, d2):
        assert mc_estimate(d2, 8, (2, 1), 5000, seed=9) == mc_estimate(d2, 8, (2, 1), 5000, seed=9)

    def test_rejects_bad_state(self, d2):
        with pytest.raises(ValueError):
            mc_estimate(d2, 8, (5, 5), 10)
        with pytest.raises(ValueError):
            mc_estimate(d2, 8, (1, 0), 0)


class TestImportanceSampling:
    def test_on_top_boundary(self, d2):
        rep = is_estimate(d2, 8, (8, 0), 50)
        assert rep.estimate == 1 and rep.std_error == 0

    def test_ones_reduces_to_plain(self, d2):
        a = mc_estimate(d2, 8, (1, 0), 5000, seed=2)
        b = is_estimate(d2, 8, (1, 0), 5000, seed=2, approx="ones")
        assert (a.estimate, a.hit_count, a.std_error) == (b.estimate, b.hit_count, b.std_error)

    def test_weighted_mass_equals_oracle(self, d2):
        approx = Approximation(d2, 4)
        total = is_weighted_mass(d2, 4, (1, 0), 400, approx)
        assert total == pytest.approx(solve_exact(d2, 4).value((1, 0)), abs=1e-10)

    def test_weighted_mass_chain_kernel(self, d3):
        approx = Approximation(d3, 5, tabulate=False)
        assert not approx.tabulated
        total = is_weighted_mass(d3, 5, (1, 1, 0), 400, approx)
        assert total == pytest.approx(solve_exact(d3, 5).value((1, 1, 0)), abs=1e-10)

    def test_table_and_chain_agree(self, paper4f):
        a = Approximation(paper4f, 12, tabulate=True)
        b = Approximation(paper4f, 12, tabulate=False)
        for x in [(1, 0, 0, 0), (3, 2, 1, 0), (0, 5, 0, 6), (2, 0, 0, 0)]:
            assert a(x) == pytest.approx(b(x), rel=1e-12)
            assert a(x) == pytest.approx(float(approx_prob_x(paper4f, 12, x)), rel=1e-12)
        assert a((0, 0, 0, 0)) == b((0, 0, 0, 0)) == 0
        assert a((12, 0, 0, 0)) == b((0, 6, 6, 0)) == 1

    def test_within_ci_of_oracle(self, d2, d2_value):
        inside = 0
        for seed in range(20):
            rep = is_estimate(d2, 8, (1, 0), 5000, seed=seed)
            inside += rep.ci95[0] <= d2_value <= rep.ci95[1]
        assert inside >= 17

    def test_variance_below_plain(self, d2):
        a = mc_estimate(d2, 8, (1, 0), 20000, seed=5)
        b = is_estimate(d2, 8, (1, 0), 20000, seed=5)
        assert b.sample_variance < a.sample_variance

    def test_reproducible(self, d3):
        a = is_estimate(d3, 10, (1, 0, 0), 3000, seed=7)
        b = is_estimate(d3, 10, (1, 0, 0), 3000, seed=7)
        assert a.to_dict() == b.to_dict()

    def test_unknown_kind(self, d2):
        with pytest.raises(ValueError):
            Approximation(d2, 8, kind="exact")


class TestCoupling:
    @pytest.mark.parametrize("params, x", [("d3", (2, 1, 0)), ("paper4f", (1, 1, 0, 1))])
    def test_no_violations(self, request, params, x):
        p = request.getfixturevalue(params)
        rep = coupled_run(p, 12, x, seed=1, paths=2000)
        assert rep.ok, rep.violations
        assert rep.resolved["tau_equiv"] > 0 and rep.resolved["sum_after"] > 0

    def test_identical_until_first_boundary(self, d3):
        _rep, tr = coupled_run(d3, 15, (3, 0, 0), seed=11, record=True)
        s01 = tr.sigma[0]
        assert s01 is not None
        assert (tr.X[: s01 + 1] == tr.Xbar[: s01 + 1]).all()

    def test_rejects_boundary_start(self, d3):
        with pytest.raises(ValueError):
            coupled_run(d3, 5, (5, 0, 0))


class TestSupermartingale:
    def test_no_violation_d3(self, d3):
        r = default_r(d3.as_float())
        rep = supermartingale_check(d3, 15, r, (3, 1, 0), seed=0, paths=1000)
        assert rep.max_violation <= 1e-12
        assert rep.jump_violations == 0 and rep.jump_checks > 0

    def test_stage_product(self, d3):
        from tandem_overflow.bounds import gamma_constants

        sp = gamma_constants(d3.as_float())
        assert sp.Gamma[-1] <= 1
        assert np.all(np.diff(np.asarray(sp.Gamma, dtype=float)) <= 0)
