import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from tandem_overflow.bounds import direct_residual, eval_h2kr, g_n, gamma_constants, lower_bound_gn
from tandem_overflow.loglinear import JacksonRouting, LogLinearTerm, conjugacy_coefficients, conjugate_point, eval_term
from tandem_overflow.model import NetworkParams, affine_map_Tn, in_B, step_x, step_y
from tandem_overflow.oracle import Ranker, gamblers_ruin
from tandem_overflow.tandem_formula import FastFormula, prob_tau_finite

SETTINGS = settings(max_examples=60, deadline=None)


@st.composite
def networks(draw, min_d=1, max_d=6, exact=False):
    d = draw(st.integers(min_d, max_d))
    lam = draw(st.integers(1, 5))
    mu = draw(st.lists(st.integers(6, 60), min_size=d, max_size=d, unique=True))
    p = NetworkParams.from_rates(lam, mu, normalize=True)
    return p if exact else p.as_float()


@st.composite
def network_and_y(draw, min_d=1, max_d=6, exact=False, extra_max=10):
    p = draw(networks(min_d, max_d, exact))
    tail = draw(st.lists(st.integers(0, 6), min_size=p.d - 1, max_size=p.d - 1))
    extra = draw(st.integers(0, extra_max))
    return p, (sum(tail) + extra,) + tuple(tail)


@st.composite
def network_n_x(draw, min_d=1, max_d=5):
    p = draw(networks(min_d, max_d))
    n = draw(st.integers(1, 30))
    x = draw(st.lists(st.integers(0, n), min_size=p.d, max_size=p.d))
    assume(sum(x) <= n)
    return p, n, tuple(x)


@SETTINGS
@given(network_n_x())
def test_Tn_involution_and_walk_steps(args):
    p, n, x = args
    assert affine_map_Tn(n, affine_map_Tn(n, x)) == x
    for inc in p.increments():
        nxt = step_x(p, x, inc)
        assert min(nxt) >= 0
        assert abs(sum(nxt) - sum(x)) <= 1


@SETTINGS
@given(network_and_y())
def test_y_steps_stay_in_B(args):
    # Y is stopped on the boundary, so only steps from strictly inside B are checked
    p, y = args
    assume(y[0] > sum(y[1:]))
    for inc in p.increments():
        assert in_B(step_y(p, y, inc))


@SETTINGS
@given(network_and_y(min_d=2, max_d=8, extra_max=0))
def test_formula_is_one_on_boundary(args):
    p, y = args
    assert prob_tau_finite(p, y) == pytest.approx(1.0, abs=1e-10)


@SETTINGS
@given(network_and_y(min_d=2, max_d=5, exact=True, extra_max=0))
def test_formula_is_exactly_one_on_boundary(args):
    p, y = args
    assert prob_tau_finite(p, y) == 1


@SETTINGS
@given(network_and_y(min_d=1, max_d=5))
def test_formula_harmonic(args):
    p, y = args
    assume(y[0] > sum(y[1:]))
    h = lambda z: prob_tau_finite(p, z)  # noqa: E731
    assert abs(direct_residual(p, h, y)) <= 1e-10 * h(y) + 1e-300


@SETTINGS
@given(network_and_y(min_d=1, max_d=5))
def test_formula_is_probability(args):
    p, y = args
    v = prob_tau_finite(p, y)
    assert -1e-12 <= v <= 1 + 1e-12
    assert FastFormula(p).prob_y(np.asarray([y]))[0] == pytest.approx(v, rel=1e-10, abs=1e-300)


@SETTINGS
@given(network_and_y(min_d=1, max_d=6))
def test_h2kr_superharmonic(args):
    p, y = args
    sp = gamma_constants(p)
    for k in range(1, p.d + 1):
        h = lambda z, k=k: eval_h2kr(p, k, sp.r, z, sp)  # noqa: E731
        assert direct_residual(p, h, y) <= 1e-15 * h(y)


@SETTINGS
@given(network_n_x())
def test_lower_bound_nonnegative(args):
    p, n, x = args
    assert g_n(p, n, x) >= p.rho ** n * (1 - 1e-12)
    assert lower_bound_gn(p, n, x) >= -1e-15


@SETTINGS
@given(st.integers(1, 5), st.integers(1, 12), st.data())
def test_ranker_bijection(d, n, data):
    rk = Ranker(d, n)
    k = data.draw(st.integers(0, rk.size - 1))
    x = rk.states[k]
    assert x.sum() <= n and (x >= 0).all()
    assert rk.index(tuple(int(v) for v in x)) == k


@SETTINGS
@given(st.floats(0.05, 0.45), st.integers(1, 200), st.data())
def test_gamblers_ruin_monotone(lam, n, data):
    mu = 1 - lam
    x = data.draw(st.integers(0, n - 1))
    a, b = gamblers_ruin(lam, mu, n, x), gamblers_ruin(lam, mu, n, x + 1)
    assert 0 <= a <= b <= 1


@SETTINGS
@given(
    st.fractions(Fraction(1, 10), Fraction(3, 2), max_denominator=50),
    st.lists(st.fractions(Fraction(1, 10), Fraction(3, 2), max_denominator=50), min_size=2, max_size=2),
    st.lists(st.integers(-4, 4), min_size=3, max_size=3),
)
def test_term_exact_matches_float(beta, alpha, y):
    t = LogLinearTerm(Fraction(3, 7), beta, tuple(alpha))
    tf = LogLinearTerm(3 / 7, float(beta), tuple(float(a) for a in alpha))
    assert float(eval_term(t, y)) == pytest.approx(eval_term(tf, y), rel=1e-12)


@SETTINGS
@given(networks(min_d=2, max_d=5), st.data())
def test_conjugate_roots_product(p, data):
    R = JacksonRouting.tandem(p)
    beta = data.draw(st.floats(0.05, 0.95))
    alpha = tuple(data.draw(st.floats(0.05, 1.5)) for _ in range(p.d - 1))
    i = data.draw(st.integers(2, p.d))
    B, K, A = conjugacy_coefficients(R, beta, alpha, i)
    disc = (K - 1) ** 2 - 4 * B * A
    assume(disc > 1e-9)
    r1, r2 = conjugate_point(R, (beta, alpha), i)
    assert math.isclose(r1 * r2, A / B, rel_tol=1e-9)
    assert math.isclose(r1 + r2, -(K - 1) / B, rel_tol=1e-9, abs_tol=1e-12)


@SETTINGS
@given(networks(exact=True))
def test_params_json_round_trip(p):
    assert NetworkParams.from_json(p.to_json()) == p
    f = p.as_float()
    assert NetworkParams.from_json(f.to_json()) == f
