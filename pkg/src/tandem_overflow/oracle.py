"""Reference values for the overflow probability.

* :func:`solve_exact` iterates ``h(x) = sum_v p_v h(step_x(x, v))`` on
  ``A_n = {x >= 0: S(x) <= n}`` with ``h = 1`` on ``S(x) = n`` and
  ``h(0) = 0``.
* :func:`solve_y_bracket` brackets ``P_y(tau < inf)`` by solving the
  Y-equation on a truncated box.
* :func:`gamblers_ruin` is the ``d = 1`` closed form.

States of ``A_n`` are ranked by the colex rank of the strictly increasing
sequence ``c_k = x_1 + ... + x_k + k - 1``.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import NetworkParams, affine_map_Tn

#: default cap on the number of states of A_n; override with TANDEM_OVERFLOW_MAX_STATES
DEFAULT_MAX_STATES = 20_000_000


class BudgetError(MemoryError):
    """Requested grid exceeds the configured state budget."""


class ConvergenceError(ArithmeticError):
    pass


def max_states() -> int:
    return int(os.environ.get("TANDEM_OVERFLOW_MAX_STATES", DEFAULT_MAX_STATES))


def count_states(d: int, n: int) -> int:
    return comb(n + d, d)


class Ranker:
    """Bijection between ``A_n`` and ``0..C(n+d, d) - 1``."""

    def __init__(self, d: int, n: int):
        self.d, self.n = d, n
        self.size = count_states(d, n)
        if self.size > max_states():
            raise BudgetError(f"|A_{n}| = {self.size} states in d={d} exceeds budget {max_states()}")
        top = n + d
        # binom[c, k] = C(c, k) for c < n + d, k <= d
        self.binom = np.array([[comb(c, k) for k in range(d + 1)] for c in range(top)], dtype=np.int64)
        states = _enumerate(d, n)
        ranks = self.rank(states)
        order = np.empty_like(ranks)
        order[ranks] = np.arange(len(ranks))
        self.states = states[order]

    def rank(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        c = np.cumsum(X, axis=1) + np.arange(self.d)[None, :]
        return self.binom[c, np.arange(1, self.d + 1)[None, :]].sum(axis=1)

    def index(self, x: Sequence[int]) -> int:
        return int(self.rank([x])[0])


def _enumerate(d: int, n: int) -> np.ndarray:
    X = np.arange(n + 1, dtype=np.int64)[:, None]
    for _ in range(1, d):
        s = X.sum(axis=1)
        counts = n - s + 1
        rows = np.repeat(X, counts, axis=0)
        starts = np.repeat(np.cumsum(counts) - counts, counts)
        new = np.arange(counts.sum()) - starts
        X = np.concatenate([rows, new[:, None]], axis=1)
    return X


def increment_matrix(d: int) -> np.ndarray:
    """Rows: arrival, transfers 1..d-1, departure (X-coordinates)."""
    V = np.zeros((d + 1, d), dtype=np.int64)
    V[0, 0] = 1
    for j in range(1, d):
        V[j, j - 1] = -1
        V[j, j] = 1
    V[d, d - 1] = -1
    return V


def neighbour_table(ranker: Ranker) -> np.ndarray:
    """``nb[i, v]`` = rank of ``step_x(state_i, v)``; states on ``S = n`` point to themselves."""
    X = ranker.states
    V = increment_matrix(ranker.d)
    nb = np.empty((len(X), len(V)), dtype=np.int64)
    own = np.arange(len(X))
    total = X.sum(axis=1)
    for k, v in enumerate(V):
        Y = X + v[None, :]
        ok = (Y >= 0).all(axis=1) & (Y.sum(axis=1) <= ranker.n)
        col = own.copy()
        col[ok] = ranker.rank(Y[ok])
        col[total == ranker.n] = own[total == ranker.n]
        nb[:, k] = col
    return nb


@numba.njit(cache=True)
def _gs_sweep(h, nb, probs, interior_order):
    worst = 0.0
    for t in range(interior_order.shape[0]):
        i = interior_order[t]
        acc = 0.0
        stay = 0.0
        for k in range(nb.shape[1]):
            j = nb[i, k]
            if j == i:
                stay += probs[k]
            else:
                acc += probs[k] * h[j]
        new = acc / (1.0 - stay)
        if new > 0.0:
            rel = abs(new - h[i]) / new
            if rel > worst:
                worst = rel
        elif h[i] != 0.0:
            worst = 1.0
        h[i] = new
    return worst


@numba.njit(cache=True)
def _residual(h, nb, probs, interior):
    worst = 0.0
    for t in range(interior.shape[0]):
        i = interior[t]
        acc = 0.0
        for k in range(nb.shape[1]):
            acc += probs[k] * h[nb[i, k]]
        if h[i] > 0.0:
            r = abs(acc - h[i]) / h[i]
        else:
            r = abs(acc - h[i])
        if r > worst:
            worst = r
    return worst


@dataclass
class SolveGrid:
    """Exact overflow probabilities on ``A_n`` in rank order."""

    params: NetworkParams
    n: int
    values: np.ndarray
    ranker: Ranker = field(repr=False)
    residual: float = 0.0
    iterations: int = 0

    @property
    def d(self) -> int:
        return self.params.d

    def value(self, x: Sequence[int]) -> float:
        return float(self.values[self.ranker.index(x)])

    def V(self, x: Sequence[int]) -> float:
        p = self.value(x)
        if p <= 0:
            raise ValueError("V_n is undefined where the probability is 0")
        return -math.log(p) / self.n

    def to_csv(self, path) -> None:
        d = self.d
        header = ",".join([f"x{k + 1}" for k in range(d)] + ["value"])
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for x, v in zip(self.ranker.states, self.values):
                fh.write(",".join(map(str, x)) + f",{float(v)!r}\n")

    def to_binary(self, path) -> None:
        """Little-endian: uint32 d, uint32 n, then float64 values in rank order."""
        with open(path, "wb") as fh:
            fh.write(struct.pack("<II", self.d, self.n))
            fh.write(np.asarray(self.values, dtype="<f8").tobytes())


def read_binary(path) -> tuple:
    """Inverse of :meth:`SolveGrid.to_binary`: ``(d, n, states, values)``."""
    with open(path, "rb") as fh:
        d, n = struct.unpack("<II", fh.read(8))
        values = np.frombuffer(fh.read(), dtype="<f8")
    ranker = Ranker(d, n)
    if len(values) != ranker.size:
        raise ValueError("truncated grid file")
    return d, n, ranker.states, values


def solve_exact(
    params: NetworkParams,
    n: int,
    tol: float = 1e-12,
    max_sweeps: int = 1_000_000,
    method: str = "auto",
    init: np.ndarray | None = None,
) -> SolveGrid:
    """Solve the harmonic equation of X on ``A_n``.

    ``method`` is ``"gs"`` (symmetric Gauss-Seidel sweeps), ``"direct"``
    (sparse LU) or ``"auto"`` (direct for ``d = 1``, Gauss-Seidel otherwise).
    Gauss-Seidel stops once the largest relative change ``delta`` of a
    forward/backward sweep pair satisfies ``delta <= tol (1 - q)`` where
    ``q`` estimates the contraction factor from successive ``delta``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    p = params.as_float()
    ranker = Ranker(p.d, n)
    nb = neighbour_table(ranker)
    probs = np.array([p.lam, *p.mu], dtype=float)
    S = ranker.states.sum(axis=1)
    interior = np.flatnonzero((S > 0) & (S < n))
    h = np.zeros(ranker.size)
    h[S == n] = 1.0
    if method == "auto":
        method = "direct" if p.d == 1 else "gs"
    sweeps = 0
    if method == "direct":
        h[interior] = _direct_solve(nb, probs, interior, h)
    elif method == "gs":
        if init is not None:
            h[interior] = np.clip(np.asarray(init, dtype=float)[interior], 0.0, 1.0)
        fwd = interior.astype(np.int64)
        bwd = fwd[::-1].copy()
        prev = None
        while True:
            d1 = _gs_sweep(h, nb, probs, fwd)
            d2 = _gs_sweep(h, nb, probs, bwd)
            sweeps += 2
            delta = max(d1, d2)
            if prev is not None and prev > 0:
                q = min(delta / prev, 0.999999)
                if delta <= tol * (1 - q) and (h[interior] > 0).all():
                    break
            if delta == 0.0 and (h[interior] > 0).all():
                break
            prev = delta
            if sweeps >= max_sweeps:
                raise ConvergenceError(f"no convergence after {sweeps} sweeps (last change {delta:.3g})")
    else:
        raise ValueError(f"unknown method {method!r}")
    res = _residual(h, nb, probs, interior.astype(np.int64)) if len(interior) else 0.0
    return SolveGrid(params, n, h, ranker, res, sweeps)


def _direct_solve(nb, probs, interior, h):
    pos = -np.ones(len(h), dtype=np.int64)
    pos[interior] = np.arange(len(interior))
    m = len(interior)
    rows, cols, vals = [np.arange(m)], [np.arange(m)], [np.ones(m)]
    rhs = np.zeros(m)
    for k in range(nb.shape[1]):
        j = nb[interior, k]
        inner = pos[j] >= 0
        rows.append(np.flatnonzero(inner))
        cols.append(pos[j[inner]])
        vals.append(-probs[k] * np.ones(inner.sum()))
        rhs[~inner] += probs[k] * h[j[~inner]]
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    return spla.spsolve(A.tocsc(), rhs)


def gamblers_ruin(lam: float, mu: float, n: int, x: int) -> float:
    """``P_x(hit n before 0)`` for the walk with up-probability ``lam``, down ``mu``.

    Written as ``rho^(n-x) (1 - rho^x) / (1 - rho^n)`` with ``rho = lam / mu``
    so nothing overflows for large ``n``.
    """
    if not 0 <= x <= n:
        raise ValueError("need 0 <= x <= n")
    if lam == mu:
        return x / n
    lr = math.log(lam / mu)
    return math.exp((n - x) * lr) * math.expm1(x * lr) / math.expm1(n * lr)


def log_decay(params: NetworkParams, n: int, x: Sequence[int], grid: SolveGrid | None = None) -> tuple:
    """``(V_n, W_n) = (-log P_x(tau_n < tau_0) / n, -log f(T_n x) / n)``."""
    from .tandem_formula import approx_prob_x

    if sum(x) == 0:
        raise ValueError("the probability is 0 at the origin")
    if grid is None:
        grid = solve_exact(params, n)
    P = grid.value(x)
    f = float(approx_prob_x(params.as_float(), n, x))
    return -math.log(P) / n, -math.log(f) / n


# -- truncated Y problem ----------------------------------------------------------


def solve_y_bracket(
    params: NetworkParams,
    y: Sequence[int],
    L: int,
    upper_far: str = "superharmonic",
    r=None,
) -> tuple:
    """Bracket ``P_y(tau < inf)`` by solving the Y-equation on a box.

    The box is ``0 <= y1 - sum_{j>=2} y_j <= L`` and ``0 <= y_j <= L``, with
    value 1 where ``y1 = sum_{j>=2} y_j``.  Leaving the box scores 0 for the
    lower value.  For the upper value it scores ``min(1, h_{2,d,r}/gamma_d)``
    at the exit point (``upper_far="superharmonic"``) or 1 (``"one"``).
    """
    from .bounds import gamma_constants

    p = params.as_float()
    d = p.d
    y = tuple(int(v) for v in y)
    ybar = y[0] - sum(y[1:])
    if ybar < 0 or any(v < 0 for v in y[1:]):
        raise ValueError(f"y={y} is not in B")
    if ybar == 0:
        return 1.0, 1.0
    if ybar > L or any(v > L for v in y[1:]):
        raise ValueError("truncation radius must exceed the extent of y")
    shape = (L + 1,) * d
    if math.prod(shape) > max_states():
        raise BudgetError(f"box with {math.prod(shape)} states exceeds budget")
    # box coordinates z = (ybar, y2..yd); increments in z-coordinates
    Z = np.indices(shape).reshape(d, -1).T
    dz = [(-1,) + (0,) * (d - 1)]  # arrival: y1 - 1
    probs = [p.lam]
    for j in range(1, d):  # transfer(j)
        v = [0] * d
        if j == 1:
            v[1] = 1  # y1 and y2 both grow, ybar unchanged
        else:
            v[j - 1] -= 1
            v[j] += 1
        dz.append(tuple(v))
        probs.append(p.mu[j - 1])
    if d == 1:
        dz.append((1,))
    else:
        v = [0] * d
        v[0] = 1
        v[d - 1] = -1
        dz.append(tuple(v))
    probs.append(p.mu[d - 1])
    # source queue of each move, for cancellation (queue index in z, or None)
    source = [None] + [j - 1 if j >= 2 else None for j in range(1, d)] + [d - 1 if d >= 2 else None]

    sp_params = gamma_constants(p, r)
    g = np.asarray(sp_params.gamma)

    def far_upper(Zo):
        # back to y-coordinates: y1 = ybar + sum tail
        yy1 = Zo[:, 0] + Zo[:, 1:].sum(axis=1)
        expo = yy1[:, None] - np.concatenate(
            [np.zeros((len(Zo), 1)), np.cumsum(Zo[:, 1:], axis=1)], axis=1
        )
        val = (g[None, :] * float(sp_params.r) ** expo).sum(axis=1) / g[-1]
        return np.minimum(val, 1.0)

    N = len(Z)
    flat = np.ravel_multi_index(Z.T, shape)
    unknown = Z[:, 0] > 0
    pos = -np.ones(N, dtype=np.int64)
    pos[flat[unknown]] = np.arange(unknown.sum())
    Zu = Z[unknown]
    m = len(Zu)
    rows, cols, vals = [np.arange(m)], [np.arange(m)], [np.ones(m)]
    rhs_lo = np.zeros(m)
    rhs_hi = np.zeros(m)
    for v, pv, src in zip(dz, probs, source):
        Zn = Zu + np.asarray(v)[None, :]
        if src is not None:
            blocked = Zu[:, src] == 0
            Zn[blocked] = Zu[blocked]
        out = (Zn > L).any(axis=1)
        hit = (~out) & (Zn[:, 0] == 0)
        inner = (~out) & (~hit)
        idx = np.flatnonzero(inner)
        tgt = pos[np.ravel_multi_index(Zn[inner].T, shape)]
        rows.append(idx)
        cols.append(tgt)
        vals.append(-pv * np.ones(len(idx)))
        rhs_lo[hit] += pv
        rhs_hi[hit] += pv
        if out.any():
            far = 1.0 if upper_far == "one" else far_upper(Zn[out])
            rhs_hi[out] += pv * far
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m)
    ).tocsc()
    lu = spla.splu(A)
    lo = lu.solve(rhs_lo)
    hi = lu.solve(rhs_hi)
    z0 = (ybar,) + y[1:]
    k = pos[np.ravel_multi_index(z0, shape)]
    return float(lo[k]), float(hi[k])
