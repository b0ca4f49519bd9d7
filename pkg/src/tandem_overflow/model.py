"""Network parameters, lattice states and the transition laws of X, Y and X-bar.

Coordinates are 0-based in code: ``x[0]`` is queue 1.  A tandem network with
``d`` queues has ``d + 1`` increments: an arrival ``e_1`` with probability
``lambda``, transfers ``-e_j + e_{j+1}`` with probability ``mu_j`` and the
departure ``-e_d`` with probability ``mu_d``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

Number = Union[float, Fraction]

#: tolerance on ``lambda + sum(mu) == 1`` when rates are floats
NORMALIZATION_TOL = 1e-12


class ParameterError(ValueError):
    """Raised for rates that are not a stable, normalized tandem network."""


def parse_rate(value) -> Number:
    """Read a rate from JSON: ``"p/q"`` strings become exact fractions."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, bool):
        raise ParameterError(f"rate must be numeric, got {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    return float(value)


def format_rate(value: Number):
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    return float(value)


@dataclass(frozen=True)
class NetworkParams:
    """Arrival and service jump probabilities of a ``d``-queue tandem walk.

    Rates are either all exact :class:`~fractions.Fraction` values (rational
    mode) or floats.  Construction validates positivity, normalization and
    stability ``lambda < min(mu)``.
    """

    lam: Number
    mu: tuple

    def __post_init__(self):
        mu = tuple(self.mu)
        if not mu:
            raise ParameterError("need at least one service rate")
        rates = (self.lam,) + mu
        exact = all(isinstance(r, Fraction) for r in rates)
        if not exact:
            rates = tuple(float(r) for r in rates)
        object.__setattr__(self, "lam", rates[0])
        object.__setattr__(self, "mu", rates[1:])
        if any(r <= 0 for r in rates):
            raise ParameterError("all rates must be positive")
        total = sum(rates)
        if exact:
            if total != 1:
                raise ParameterError(f"lambda + sum(mu) must equal 1, got {total}")
        elif abs(total - 1.0) > NORMALIZATION_TOL:
            raise ParameterError(f"lambda + sum(mu) must equal 1, got {total!r}")
        if not self.lam < min(self.mu):
            raise ParameterError(
                "unstable network: need lambda < mu_i for every i "
                f"(lambda={self.lam}, min mu={min(self.mu)})"
            )

    @classmethod
    def from_rates(cls, lam, mu: Iterable, normalize: bool = False) -> "NetworkParams":
        """Build from raw rates; ``normalize=True`` rescales them to sum to one."""
        lam = parse_rate(lam)
        mu = tuple(parse_rate(m) for m in mu)
        if normalize:
            total = lam + sum(mu)
            lam = lam / total
            mu = tuple(m / total for m in mu)
        return cls(lam, mu)

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkParams":
        if "lambda" not in data or "mu" not in data:
            raise ParameterError('params need "lambda" and "mu" keys')
        return cls.from_rates(data["lambda"], data["mu"])

    @classmethod
    def from_json(cls, text: str) -> "NetworkParams":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {"lambda": format_rate(self.lam), "mu": [format_rate(m) for m in self.mu]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @property
    def d(self) -> int:
        return len(self.mu)

    @property
    def exact(self) -> bool:
        return isinstance(self.lam, Fraction)

    @property
    def rhos(self) -> tuple:
        """Utilizations ``rho_i = lambda / mu_i``."""
        return tuple(self.lam / m for m in self.mu)

    @property
    def rho(self) -> Number:
        return max(self.rhos)

    def as_float(self) -> "NetworkParams":
        if not self.exact:
            return self
        return NetworkParams(float(self.lam), tuple(float(m) for m in self.mu))

    def min_mu_gap(self) -> float:
        if self.d < 2:
            return math.inf
        mu = sorted(float(m) for m in self.mu)
        return min(b - a for a, b in zip(mu, mu[1:]))

    def increments(self) -> list["Increment"]:
        incs = [Increment("arrival", 0, self.lam)]
        for j in range(1, self.d):
            incs.append(Increment("transfer", j, self.mu[j - 1]))
        incs.append(Increment("departure", self.d, self.mu[-1]))
        return incs


@dataclass(frozen=True)
class Increment:
    """One jump of the walk.

    ``tag`` is ``"arrival"``, ``"transfer"`` (``index`` = source queue ``j``,
    1-based) or ``"departure"`` (``index`` = ``d``).
    """

    tag: str
    index: int
    prob: Number

    def vector(self, d: int) -> tuple:
        v = [0] * d
        if self.tag == "arrival":
            v[0] = 1
        elif self.tag == "transfer":
            v[self.index - 1] = -1
            v[self.index] = 1
        elif self.tag == "departure":
            v[d - 1] = -1
        else:
            raise ValueError(f"unknown increment tag {self.tag!r}")
        return tuple(v)

    def reflected(self, d: int) -> tuple:
        """The Y-increment: coordinate 1 of the X-increment flipped."""
        v = list(self.vector(d))
        v[0] = -v[0]
        return tuple(v)


def arrival(params: NetworkParams) -> Increment:
    return params.increments()[0]


def transfer(params: NetworkParams, j: int) -> Increment:
    if not 1 <= j < params.d:
        raise ValueError(f"transfer index must be in 1..{params.d - 1}")
    return params.increments()[j]


def departure(params: NetworkParams) -> Increment:
    return params.increments()[-1]


def _apply(x: Sequence[int], v: Sequence[int], first_free: int) -> tuple:
    """Add ``v`` unless a constrained coordinate (index >= first_free) goes negative."""
    out = tuple(a + b for a, b in zip(x, v))
    if any(c < 0 for c in out[first_free:]):
        return tuple(x)
    return out


def step_x(params: NetworkParams, x: Sequence[int], inc: Increment) -> tuple:
    """One step of the constrained walk X on ``Z_+^d``."""
    return _apply(x, inc.vector(params.d), 0)


def step_y(params: NetworkParams, y: Sequence[int], inc: Increment) -> tuple:
    """One step of the limit walk Y; coordinate 1 is free, increments reflected."""
    return _apply(y, inc.reflected(params.d), 1)


def step_xbar(params: NetworkParams, x: Sequence[int], inc: Increment) -> tuple:
    """X-bar: same as X but unconstrained in coordinate 1."""
    return _apply(x, inc.vector(params.d), 1)


def affine_map_Tn(n: int, x: Sequence[int]) -> tuple:
    """``T_n(x) = (n - x(1), x(2), ..., x(d))``; an involution."""
    return (n - x[0],) + tuple(x[1:])


def sum_S(x: Sequence[int]) -> int:
    return sum(x)


def in_boundary_B(y: Sequence[int]) -> bool:
    return y[0] == sum(y[1:])


def in_B(y: Sequence[int]) -> bool:
    return all(c >= 0 for c in y[1:]) and y[0] >= sum(y[1:])


def maximal_set(params: NetworkParams) -> tuple:
    """Indices (1-based) not dominated by a later index with larger or equal rho."""
    rho = params.rhos
    d = params.d
    return tuple(
        i + 1
        for i in range(d)
        if not any(rho[j] >= rho[i] for j in range(i + 1, d))
    )


def _power_le(base: Number, exponent: Fraction, bound: Number) -> bool:
    """Exact test ``base**exponent <= bound`` for 0 < base < 1 and rational exponent."""
    p, q = exponent.numerator, exponent.denominator
    # base**(p/q) <= bound  <=>  base**p <= bound**q, both sides positive
    return base ** p <= bound ** q


def in_region_Rrho(params: NetworkParams, x_scaled: Sequence) -> bool:
    """Membership of a scaled point in the region where ``g_n`` bottoms out at ``rho^n``.

    ``sum_{j<=i} x(j) <= 1 - log(rho)/log(rho_i)`` for every maximal index
    ``i``.  With exact rates and rational coordinates the comparison is done
    in exact arithmetic as ``rho_i**(1 - s) <= rho``.
    """
    rho = params.rho
    rhos = params.rhos
    exact = params.exact and all(isinstance(c, (int, Fraction)) for c in x_scaled)
    for i in maximal_set(params):
        s = sum(x_scaled[:i])
        if exact:
            slack = 1 - Fraction(s)
            if slack < 0 or not _power_le(rhos[i - 1], slack, rho):
                return False
        else:
            if s > 1 - math.log(rho) / math.log(rhos[i - 1]) + 1e-15:
                return False
    return True
