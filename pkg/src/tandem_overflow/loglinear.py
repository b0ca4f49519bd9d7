"""Log-linear terms, characteristic polynomials and conjugate points.

A point ``(beta, alpha)`` has ``alpha`` stored as a tuple over indices
``2..d`` (so ``alpha[0]`` is ``alpha(2)``).  Wherever an index ``d + 1`` is
needed it resolves to ``beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .model import NetworkParams, Number


class SurfaceError(ArithmeticError):
    """Degenerate or complex conjugacy quadratic."""


def _is_exact(*values) -> bool:
    return all(isinstance(v, (int, Fraction)) for v in values)


def monomial(beta, alpha: Sequence, v: Sequence[int]):
    """``[(beta, alpha), v] = beta^(v1 - sum_{j>=2} v_j) * prod alpha(j)^v_j``."""
    # int ** negative is a float; promote so exact inputs stay exact
    if isinstance(beta, int):
        beta = Fraction(beta)
    out = beta ** (v[0] - sum(v[1:]))
    for a, e in zip(alpha, v[1:]):
        if e:
            out = out * (Fraction(a) if isinstance(a, int) else a) ** e
    return out


def log_monomial(beta, alpha: Sequence, v: Sequence[int]) -> float:
    """Natural log of :func:`monomial` for positive ``beta`` and ``alpha``."""
    out = (v[0] - sum(v[1:])) * math.log(beta)
    for a, e in zip(alpha, v[1:]):
        if e:
            out += e * math.log(a)
    return out


@dataclass(frozen=True)
class LogLinearTerm:
    """The function ``y -> c * [(beta, alpha), y]``."""

    c: Number
    beta: Number
    alpha: tuple

    def __call__(self, y: Sequence[int]):
        return eval_term(self, y)

    def log_abs(self, y: Sequence[int]) -> float:
        return math.log(abs(self.c)) + log_monomial(self.beta, self.alpha, y)


def eval_term(t: LogLinearTerm, y: Sequence[int], log: bool = False):
    """Evaluate ``c [(beta, alpha), y]``.

    With ``log=True`` returns ``(sign, log|value|)`` so callers can handle
    exponents outside the float range.  In linear mode a result that
    overflows raises :class:`OverflowError`.
    """
    if len(t.alpha) != len(y) - 1:
        raise ValueError(f"alpha has {len(t.alpha)} entries, state has dimension {len(y)}")
    if log:
        sign = (t.c > 0) - (t.c < 0)
        if sign == 0:
            return 0, -math.inf
        return sign, t.log_abs(y)
    if _is_exact(t.c, t.beta, *t.alpha):
        return t.c * monomial(t.beta, t.alpha, y)
    if t.c == 0:
        return 0.0
    lv = t.log_abs(y)
    if lv > 709.78:
        raise OverflowError("term magnitude exceeds float range; use log=True")
    if lv < -745.0:
        return 0.0
    # direct products are more accurate than exp(log) when they are representable
    try:
        val = float(t.c) * float(monomial(t.beta, t.alpha, y))
    except OverflowError:
        val = math.inf
    if math.isfinite(val) and val != 0.0:
        return val
    return math.copysign(math.exp(lv), t.c)


@dataclass(frozen=True)
class JacksonRouting:
    """Jump probabilities ``p(i, j)`` of a Jackson network, nodes ``0..d``.

    Node 0 is the outside world: ``p(0, j)`` are arrivals, ``p(i, 0)``
    departures.  ``mu_i`` is the row sum of ``p(i, .)``.
    """

    p: tuple  # tuple of row tuples

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.p)
        object.__setattr__(self, "p", rows)
        m = len(rows)
        if m < 2 or any(len(r) != m for r in rows):
            raise ValueError("routing matrix must be square with at least two rows")
        if any(rows[i][i] != 0 for i in range(m)):
            raise ValueError("routing matrix must have a zero diagonal")
        if any(x < 0 for r in rows for x in r):
            raise ValueError("routing probabilities must be nonnegative")
        total = sum(x for r in rows for x in r)
        if self.exact:
            if total != 1:
                raise ValueError(f"routing probabilities sum to {total}, not 1")
        elif abs(total - 1) > 1e-12:
            raise ValueError(f"routing probabilities sum to {total}, not 1")

    @classmethod
    def from_matrix(cls, rows: Iterable[Iterable]) -> "JacksonRouting":
        return cls(tuple(tuple(r) for r in rows))

    @classmethod
    def tandem(cls, params: NetworkParams) -> "JacksonRouting":
        d = params.d
        zero = Fraction(0) if params.exact else 0.0
        p = [[zero] * (d + 1) for _ in range(d + 1)]
        p[0][1] = params.lam
        for j in range(1, d):
            p[j][j + 1] = params.mu[j - 1]
        p[d][0] = params.mu[d - 1]
        return cls.from_matrix(p)

    @property
    def d(self) -> int:
        return len(self.p) - 1

    @property
    def exact(self) -> bool:
        return all(isinstance(x, (int, Fraction)) for r in self.p for x in r)

    @property
    def mu(self) -> tuple:
        """``mu_i`` for ``i = 1..d`` (index 0 of the tuple is node 1)."""
        return tuple(sum(self.p[i]) for i in range(1, self.d + 1))

    def jumps(self):
        """Yield ``(i, j, p(i, j), v_ij)`` over positive entries.

        ``v_ij`` is the Y-increment of a move from node ``i`` to node ``j``:
        ``-e_i + e_j`` with ``e_0 = 0`` and coordinate 1 sign-flipped.
        """
        d = self.d
        for i in range(d + 1):
            for j in range(d + 1):
                pij = self.p[i][j]
                if i == j or pij == 0:
                    continue
                v = [0] * d
                if i:
                    v[i - 1] -= 1
                if j:
                    v[j - 1] += 1
                v[0] = -v[0]
                yield i, j, pij, tuple(v)


def _zero_like(routing_or_params):
    return Fraction(0) if routing_or_params.exact else 0.0


def char_poly_general(routing: JacksonRouting, a: Iterable[int], beta, alpha: Sequence):
    """``p_a(beta, alpha)``: jumps out of nodes in ``a`` are replaced by ``mu_i``.

    Membership in the characteristic surface ``H_a`` means the value is 1.
    """
    a = set(a)
    mu = routing.mu
    total = _zero_like(routing)
    for i, _j, pij, v in routing.jumps():
        if i in a:
            continue
        total += pij * monomial(beta, alpha, v)
    for i in a:
        total += mu[i - 1]
    return total


def C_general(routing: JacksonRouting, i: int, beta, alpha: Sequence):
    """``C(i) = mu_i - sum_j p(i, j) [(beta, alpha), v_ij]``; equals ``p_i - p``."""
    total = routing.mu[i - 1]
    for src, _j, pij, v in routing.jumps():
        if src == i:
            total -= pij * monomial(beta, alpha, v)
    return total


def _ext(beta, alpha: Sequence, d: int):
    """1-based accessor with ``alpha(d+1) = beta``."""
    a = (None, None) + tuple(alpha) + (beta,)
    return a


def char_poly_tandem(params: NetworkParams, beta, alpha: Sequence):
    """``lambda/beta + mu_1 alpha(2) + sum_{j=2}^d mu_j alpha(j+1)/alpha(j)``."""
    d = params.d
    a = _ext(beta, alpha, d)
    if d == 1:
        return params.lam / beta + params.mu[0] * beta
    total = params.lam / beta + params.mu[0] * a[2]
    for j in range(2, d + 1):
        total += params.mu[j - 1] * a[j + 1] / a[j]
    return total


def C_tandem(params: NetworkParams, j: int, beta, alpha: Sequence):
    """``C(j) = mu_j (1 - alpha(j+1)/alpha(j))`` for ``j = 2..d``."""
    d = params.d
    if not 2 <= j <= d:
        raise ValueError(f"label must be in 2..{d}")
    a = _ext(beta, alpha, d)
    return params.mu[j - 1] * (1 - a[j + 1] / a[j])


def conjugacy_coefficients(routing: JacksonRouting, beta, alpha: Sequence, i: int):
    """Coefficients ``(B, K, A)`` with ``p = B alpha(i) + K + A / alpha(i)``.

    All three are evaluated with ``alpha(i)`` set to one.  The conjugacy
    quadratic is ``B x^2 + (K - 1) x + A = 0``.
    """
    d = routing.d
    if not 2 <= i <= d:
        raise ValueError(f"label must be in 2..{d}")
    one = Fraction(1) if _is_exact(beta, *alpha) and routing.exact else 1.0
    base = list(alpha)
    base[i - 2] = one
    coef = {-1: _zero_like(routing), 0: _zero_like(routing), 1: _zero_like(routing)}
    for _src, _dst, pij, v in routing.jumps():
        coef[v[i - 1]] += pij * monomial(beta, base, v)
    return coef[1], coef[0], coef[-1]


def _exact_sqrt(q: Fraction):
    if q < 0:
        return None
    num, den = q.numerator, q.denominator
    rn, rd = math.isqrt(num), math.isqrt(den)
    if rn * rn == num and rd * rd == den:
        return Fraction(rn, rd)
    return None


def conjugate_point(routing: JacksonRouting, base: tuple, i: int) -> tuple:
    """The two ``alpha(i)`` roots making ``(beta, alpha)`` lie on the surface.

    ``base`` is ``(beta, alpha)``; only ``alpha(i)`` is free.  Roots are
    returned in ascending order.  In exact mode the roots are fractions when
    the discriminant is a rational square and floats otherwise.
    """
    beta, alpha = base
    B, K, A = conjugacy_coefficients(routing, beta, alpha, i)
    b = K - 1
    if B == 0:
        raise SurfaceError(f"degenerate conjugacy quadratic at label {i}")
    disc = b * b - 4 * B * A
    if disc < 0:
        raise SurfaceError(f"complex conjugate roots at label {i}")
    if isinstance(disc, Fraction):
        s = _exact_sqrt(disc)
        if s is not None:
            r1, r2 = (-b - s) / (2 * B), (-b + s) / (2 * B)
            return tuple(sorted((r1, r2)))
        B, b, A, disc = float(B), float(b), float(A), float(disc)
    s = math.sqrt(disc)
    # avoid cancellation: compute the larger-magnitude root first
    q = -0.5 * (b + math.copysign(s, b)) if b != 0 else -0.5 * s
    if q == 0:
        return (0.0, 0.0)
    r1, r2 = q / B, A / q
    return tuple(sorted((r1, r2)))


def conjugate_product(routing: JacksonRouting, beta, alpha: Sequence, i: int):
    """Product of the two conjugate roots, ``A / B``."""
    B, _K, A = conjugacy_coefficients(routing, beta, alpha, i)
    return A / B


def conjugate_product_tandem(params: NetworkParams, beta, alpha: Sequence, i: int):
    """Tandem closed form of the root product at label ``i``.

    ``alpha(3) mu_2 / mu_1`` for ``i = 2`` and
    ``alpha(i-1) alpha(i+1) mu_i / mu_{i-1}`` for ``i >= 3``.
    """
    d = params.d
    a = _ext(beta, alpha, d)
    mu = params.mu
    if i == 2:
        return a[3] * mu[1] / mu[0]
    return a[i - 1] * a[i + 1] * mu[i - 1] / mu[i - 2]
