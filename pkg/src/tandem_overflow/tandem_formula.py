"""Closed-form ``P_y(tau < inf)`` for the tandem walk.

The formula is a weighted sum over ``d = 1..D`` of functions ``h*_d``, each
itself a sum of ``2^(d-1)`` log-linear terms indexed by subsets ``b`` of
``{1..d}`` that contain ``d``.  Two evaluators are provided:

* a term-by-term sum (exact in rational mode, ``math.fsum`` in float mode),
* a chain recursion that factors the same sum in ``O(D^2)`` per state and
  is vectorized over many states (:class:`FastFormula`).
"""

from __future__ import annotations

import math
import warnings
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .jackson_systems import HarmonicSolution, LabeledGraph, mask_of, members
from .loglinear import JacksonRouting, LogLinearTerm, eval_term
from .model import NetworkParams, ParameterError, affine_map_Tn, in_B

#: below this gap between service rates the float formula loses accuracy
NEAR_EQUAL_THRESHOLD = 1e-6


class DistinctnessError(ParameterError):
    """Service rates must be pairwise distinct for the closed form."""


def require_distinct(params: NetworkParams, threshold: float = NEAR_EQUAL_THRESHOLD):
    mu = params.mu
    if len(set(mu)) != len(mu):
        raise DistinctnessError(
            "closed form needs pairwise distinct service rates; "
            "use the equal-rates formula (d=3) or perturb the rates"
        )
    if not params.exact and params.min_mu_gap() < threshold:
        warnings.warn(
            f"service rates differ by less than {threshold:g}; float evaluation may "
            "cancel badly, consider rational rates",
            RuntimeWarning,
            stacklevel=3,
        )


# -- graphs -----------------------------------------------------------------


def build_G(d: int, D: int) -> LabeledGraph:
    """The ``{2..D}``-regular graph on subsets ``a + {d}``, ``a`` in ``{1..d-1}``.

    A ``j``-edge joins ``b`` and ``b + {j-1}`` whenever ``j`` is in ``b``,
    ``j != 1`` and ``j - 1`` is not in ``b``.  Unused labels become loops.
    """
    if not 1 <= d <= D:
        raise ValueError(f"need 1 <= d <= D, got d={d}, D={D}")
    top = 1 << (d - 1)
    vertices = [top | low for low in range(top)]
    edges = {}
    for b in vertices:
        for j in members(b):
            if j != 1 and not b & (1 << (j - 2)):
                edges[frozenset((b, b | (1 << (j - 2))))] = j
    labels = frozenset(range(2, D + 1))
    used = {b: set() for b in vertices}
    for key, lab in edges.items():
        for b in key:
            used[b].add(lab)
    loops = {b: frozenset(labels - used[b]) for b in vertices}
    return LabeledGraph(labels, vertices, edges, loops)


def decompose_embedding(D: int) -> dict:
    """Split the vertices of ``G_{D,D}`` by second-largest element.

    Key ``k`` holds the copy of ``G_{k,D}`` (vertices ``a + {k, D}``); key 0
    holds the lone vertex ``{D}``.
    """
    if D < 2:
        raise ValueError("need D >= 2")
    parts = {k: [] for k in range(D)}
    for b in build_G(D, D).vertices:
        elems = members(b)
        parts[elems[-2] if len(elems) > 1 else 0].append(b)
    return parts


# -- explicit solution --------------------------------------------------------


def _r(params: NetworkParams, l: int, k: int):
    """``(mu_l - lambda) / (mu_l - mu_k)``, 1-based indices."""
    mu = params.mu
    den = mu[l - 1] - mu[k - 1]
    if den == 0:
        raise DistinctnessError(f"mu_{l} == mu_{k}")
    return (mu[l - 1] - params.lam) / den


def _one(params: NetworkParams):
    return Fraction(1) if params.exact else 1.0


def cstar(a: Sequence[int], params: NetworkParams):
    """``(-1)^(m-1) prod_j prod_{l=a(j)+1}^{a(j+1)} (mu_l - lam)/(mu_l - mu_{a(j)})``."""
    a = sorted(a)
    if not a:
        raise ValueError("subset must be nonempty")
    out = _one(params)
    for lo, hi in zip(a, a[1:]):
        for l in range(lo + 1, hi + 1):
            out *= _r(params, l, lo)
    return -out if len(a) % 2 == 0 else out


def alphastar(a: Sequence[int], params: NetworkParams, D: int | None = None) -> tuple:
    """``alpha*`` over indices ``2..D``: 1 up to ``a(1)``, then ``rho_{a(j)}`` stepwise."""
    a = sorted(a)
    D = params.d if D is None else D
    if not a or a[0] < 1 or a[-1] > D:
        raise ValueError(f"subset must be a nonempty part of 1..{D}")
    rho = params.rhos
    one = _one(params)
    out = []
    for l in range(2, D + 1):
        if l <= a[0]:
            out.append(one)
            continue
        # largest a(j) strictly below l
        k = max(x for x in a if x < l)
        out.append(rho[k - 1])
    return tuple(out)


def betastar(a: Sequence[int], params: NetworkParams):
    return params.rhos[max(a) - 1]


def outer_weight(d: int, params: NetworkParams):
    """``prod_{l=d+1}^D (mu_l - lambda)/(mu_l - mu_d)``."""
    out = _one(params)
    for l in range(d + 1, params.d + 1):
        out *= _r(params, l, d)
    return out


def tandem_solution(d: int, params: NetworkParams) -> tuple:
    """``(G_{d,D}, solution)`` for ``D = params.d``."""
    D = params.d
    G = build_G(d, D)
    beta = params.rhos[d - 1]
    alpha, c = {}, {}
    for b in G.vertices:
        a = members(b)
        alpha[b] = alphastar(a, params, D)
        c[b] = cstar(a, params)
    return G, HarmonicSolution(beta, alpha, c)


def terms(params: NetworkParams, d: int | None = None):
    """Yield ``(d, subset, weighted LogLinearTerm)`` for the full formula or one ``h*_d``.

    Order: ``d`` ascending, subsets in binary-counter order of their low bits.
    With ``d`` given the weight ``w_d`` is not applied.
    """
    ds = range(1, params.d + 1) if d is None else (d,)
    for dd in ds:
        w = outer_weight(dd, params) if d is None else _one(params)
        beta = params.rhos[dd - 1]
        top = 1 << (dd - 1)
        for low in range(top):
            a = members(top | low)
            yield dd, a, LogLinearTerm(w * cstar(a, params), beta, alphastar(a, params))


def _total(values):
    if all(isinstance(v, (int, Fraction)) for v in values):
        return sum(values, Fraction(0))
    return math.fsum(float(v) for v in values)


def eval_hstar(d: int, params: NetworkParams, y: Sequence[int]):
    """``h*_d(y) = sum_a c*_{a+{d}} [(rho_d, alpha*_{a+{d}}), y]``."""
    require_distinct(params)
    if not 1 <= d <= params.d:
        raise ValueError(f"d must be in 1..{params.d}")
    return _total([eval_term(t, y) for _, _, t in terms(params, d)])


def _check_y(params: NetworkParams, y: Sequence[int]) -> tuple:
    y = tuple(int(v) for v in y)
    if len(y) != params.d:
        raise ValueError(f"state has dimension {len(y)}, expected {params.d}")
    if not in_B(y):
        raise ValueError(f"y={y} is not in B")
    return y


#: above this dimension the float evaluator switches to the chain recursion
TERM_SUM_MAX_D = 10


def _chain_scalar(params: NetworkParams, y: Sequence[int]):
    """Chain recursion of :class:`FastFormula` at one state, in the params' arithmetic."""
    D = params.d
    rho = params.rhos
    F = [_one(params)] * D
    for k0 in range(1, D):
        fac = F[k0 - 1]
        for k in range(k0 + 1, D + 1):
            fac = fac * _r(params, k, k0) * rho[k0 - 1] ** y[k - 1]
            F[k - 1] = F[k - 1] - fac
    out = []
    for d in range(1, D + 1):
        expo = y[0] - sum(y[1:d])
        base = Fraction(rho[d - 1]) if params.exact else rho[d - 1]
        out.append(outer_weight(d, params) * base ** expo * F[d - 1])
    return _total(out)


def prob_tau_finite(params: NetworkParams, y: Sequence[int], method: str = "auto"):
    """``P_y(tau < inf)`` for ``y`` in ``B``.

    ``method`` is ``"terms"`` (fsum or exact rational sum over all
    ``2^d - 1`` terms), ``"chain"`` (the recursion of :class:`FastFormula`;
    exact for rational rates) or ``"auto"`` (chain for rational rates,
    terms for float rates up to :data:`TERM_SUM_MAX_D`).
    """
    require_distinct(params)
    y = _check_y(params, y)
    if method == "auto":
        method = "terms" if not params.exact and params.d <= TERM_SUM_MAX_D else "chain"
    if method == "terms":
        return _total([eval_term(t, y) for _, _, t in terms(params)])
    if method == "chain":
        if params.exact:
            return _chain_scalar(params, y)
        return float(FastFormula(params).prob_y(np.asarray([y]))[0])
    raise ValueError(f"unknown method {method!r}")


def term_breakdown(params: NetworkParams, y: Sequence[int]) -> list:
    """Rows ``(d, subset, c, beta, alpha, value)`` of the weighted formula at ``y``."""
    require_distinct(params)
    y = _check_y(params, y)
    return [(d, a, t.c, t.beta, t.alpha, eval_term(t, y)) for d, a, t in terms(params)]


def approx_prob_x(params: NetworkParams, n: int, x: Sequence[int], method: str = "auto"):
    """Approximate ``P_x(tau_n < tau_0)`` by ``P_{T_n(x)}(tau < inf)``."""
    if any(v < 0 for v in x) or sum(x) > n:
        raise ValueError(f"x={tuple(x)} is not in A_{n}")
    return prob_tau_finite(params, affine_map_Tn(n, x), method=method)


def prob_tau_finite_equal_rates_d3(lam, mu, y: Sequence[int]):
    """Limit of the closed form for ``d = 3`` and ``mu_1 = mu_2 = mu_3 = mu``.

    ``rho^yb (c0^2 yb^2 rho^(y2+y3) / 2 + rho^y3 ((c0^2/2 + y3 c0^2) rho^y2 + c0) yb + 1)``
    with ``yb = y1 - y2 - y3`` and ``c0 = (mu - lam)/mu``.
    """
    if isinstance(mu, (tuple, list)):
        if len(mu) != 3 or len(set(mu)) != 1:
            raise ParameterError("equal-rates formula needs three equal service rates")
        mu = mu[0]
    if not 0 < lam < mu:
        raise ParameterError("need 0 < lambda < mu")
    y1, y2, y3 = (int(v) for v in y)
    yb = y1 - y2 - y3
    if y2 < 0 or y3 < 0 or yb < 0:
        raise ValueError(f"y={tuple(y)} is not in B")
    rho = lam / mu
    c0 = (mu - lam) / mu
    half = Fraction(1, 2) if isinstance(c0, Fraction) else 0.5
    inner = (
        half * c0 ** 2 * yb ** 2 * rho ** (y2 + y3)
        + rho ** y3 * ((half * c0 ** 2 + y3 * c0 ** 2) * rho ** y2 + c0) * yb
        + 1
    )
    return rho ** yb * inner


# -- vectorized evaluator -----------------------------------------------------


class FastFormula:
    """Vectorized float evaluation of the closed form via a chain recursion.

    For fixed ``d`` the sum over subsets ``b = {b_1 < ... < b_m = d}``
    factors along consecutive pairs:

        h*_d(y) = rho_d^(y1 - sum_{l=2}^d y_l) F(d),
        F(k) = 1 + sum_{k0 < k} F(k0) K(k0, k),
        K(k0, k) = -prod_{l=k0+1}^{k} r(l, k0) rho_{k0}^{y_l},

    where ``r(l, k) = (mu_l - lambda)/(mu_l - mu_k)``.
    """

    def __init__(self, params: NetworkParams):
        require_distinct(params)
        p = params.as_float()
        self.params = params
        self.D = p.d
        self.lam = p.lam
        self.mu = np.asarray(p.mu, dtype=float)
        self.rho = p.lam / self.mu
        self.log_rho = np.log(self.rho)
        D = self.D
        # r[l, k] for 1-based l, k stored at [l-1, k-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = (self.mu[:, None] - self.lam) / (self.mu[:, None] - self.mu[None, :])
        np.fill_diagonal(r, np.nan)
        self.r = r
        self.weights = np.array([float(outer_weight(d, p)) for d in range(1, D + 1)])

    def h_chain(self, Y: np.ndarray) -> np.ndarray:
        """``F(k)`` for ``k = 1..D`` at each row of ``Y``; shape ``(N, D)``."""
        Y = np.asarray(Y, dtype=float)
        N, D = Y.shape
        F = np.ones((N, D))
        for k0 in range(1, D):
            # cumulative product over l = k0+1..D of r(l,k0) rho_k0^{y_l}
            l_idx = np.arange(k0 + 1, D + 1)
            logs = Y[:, l_idx - 1] * self.log_rho[k0 - 1]
            rr = self.r[l_idx - 1, k0 - 1]
            fac = np.cumprod(np.exp(logs) * rr[None, :], axis=1)
            # K(k0, k) for k = k0+1..D
            F[:, k0:] -= F[:, [k0 - 1]] * fac
        return F

    def hstar(self, Y: np.ndarray) -> np.ndarray:
        """``h*_d(y)`` for every ``d``; shape ``(N, D)``."""
        Y = np.asarray(Y, dtype=float)
        F = self.h_chain(Y)
        csum = np.cumsum(Y[:, 1:], axis=1)
        tail = np.concatenate([np.zeros((len(Y), 1)), csum], axis=1)  # sum_{l=2}^d y_l
        expo = Y[:, [0]] - tail
        return np.exp(expo * self.log_rho[None, :]) * F

    def prob_y(self, Y: np.ndarray) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y))
        return self.hstar(Y) @ self.weights

    def prob_x(self, n: int, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X))
        Y = X.copy()
        Y[:, 0] = n - X[:, 0]
        return self.prob_y(Y)


def formula_table(params: NetworkParams, n: int, ranker) -> np.ndarray:
    """Closed-form values on every state of ``A_n`` in the ranker's order."""
    ff = FastFormula(params)
    return ff.prob_x(n, ranker.states)
