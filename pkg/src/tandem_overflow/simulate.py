"""Monte Carlo, importance sampling and path-wise checks of the coupling lemmas.

Random numbers: samples are processed in fixed-size blocks; block ``b``
draws from ``SeedSequence(seed, spawn_key=(b,))``, so a sample's outcome
depends only on ``(seed, block size, sample index)``.

The importance sampler is the Doob transform of an approximation ``f`` of
``P_x(tau_n < tau_0)``: from ``x`` it moves to ``x_v = step_x(x, v)`` with
probability ``q_v = p_v f(x_v) / Z(x)``, ``Z(x) = sum_u p_u f(x_u)``, and
carries the likelihood ratio ``p_v / q_v = Z(x) / f(x_v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numba
import numpy as np

from .model import NetworkParams
from .oracle import Ranker, count_states, increment_matrix
from .tandem_formula import FastFormula

DEFAULT_HORIZON_MULT = 64
DEFAULT_BLOCK = 4096
#: time steps drawn per refill of a block's uniform buffer
TIME_CHUNK = 256
#: largest A_n for which the IS approximation is tabulated up front
TABLE_MAX_STATES = 2_000_000
DEFAULT_FLOOR = 1e-300


@dataclass
class SimReport:
    estimate: float
    std_error: float
    ci95: tuple
    samples: int
    hit_count: int
    seed: int
    method: str
    horizon: int
    overruns: int = 0
    sample_variance: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci95"] = list(self.ci95)
        return d


def _rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


def _sources(d: int) -> np.ndarray:
    """Queue (0-based) an increment removes from; -1 for the arrival."""
    return np.array([-1] + list(range(d)), dtype=np.int64)


def _report(values: np.ndarray, hits: int, seed: int, method: str, horizon: int, overruns: int, **extra) -> SimReport:
    m = len(values)
    est = float(np.mean(values)) if m else 0.0
    var = float(np.var(values, ddof=1)) if m > 1 else 0.0
    se = math.sqrt(var / m) if m else 0.0
    return SimReport(est, se, (est - 1.96 * se, est + 1.96 * se), m, hits, seed, method, horizon, overruns, var, extra)


def _validate(params: NetworkParams, n: int, x: Sequence[int], samples: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    if len(x) != params.d or (x < 0).any() or x.sum() > n:
        raise ValueError(f"x={tuple(x)} is not in A_{n}")
    if samples < 1:
        raise ValueError("need at least one sample")
    return x


# -- plain Monte Carlo ----------------------------------------------------------


@numba.njit(cache=True)
def _mc_advance(X, state, steps, U, cum, V, src, n, horizon):
    """Advance every live path through one buffer of uniforms.

    ``state``: 0 running, 1 hit level n, 2 hit 0, 3 horizon overrun.
    """
    B, T = U.shape
    d = X.shape[1]
    for b in range(B):
        if state[b] != 0:
            continue
        s = 0
        for k in range(d):
            s += X[b, k]
        for t in range(T):
            u = U[b, t]
            v = 0
            while v < cum.shape[0] - 1 and u >= cum[v]:
                v += 1
            if src[v] < 0 or X[b, src[v]] > 0:
                for k in range(d):
                    X[b, k] += V[v, k]
                if v == 0:
                    s += 1
                elif v == V.shape[0] - 1:
                    s -= 1
            steps[b] += 1
            if s == n:
                state[b] = 1
                break
            if s == 0:
                state[b] = 2
                break
            if steps[b] >= horizon:
                state[b] = 3
                break


def mc_estimate(
    params: NetworkParams,
    n: int,
    x: Sequence[int],
    samples: int,
    seed: int = 0,
    horizon_mult: int = DEFAULT_HORIZON_MULT,
    block: int = DEFAULT_BLOCK,
) -> SimReport:
    """Indicator average of ``{tau_n < tau_0}``; overruns count as misses."""
    x = _validate(params, n, x, samples)
    p = params.as_float()
    horizon = horizon_mult * n
    if x.sum() == n or x.sum() == 0:
        val = 1.0 if x.sum() == n else 0.0
        return _report(np.full(samples, val), int(val) * samples, seed, "plain", horizon, 0)
    probs = np.array([p.lam, *p.mu])
    cum = np.cumsum(probs)
    V = increment_matrix(p.d)
    src = _sources(p.d)
    out = np.empty(samples)
    overruns = 0
    for b, start in enumerate(range(0, samples, block)):
        m = min(block, samples - start)
        rng = _rng(seed, b)
        X = np.tile(x, (m, 1))
        state = np.zeros(m, dtype=np.int64)
        steps = np.zeros(m, dtype=np.int64)
        while (state == 0).any():
            U = rng.random((m, TIME_CHUNK))
            _mc_advance(X, state, steps, U, cum, V, src, n, horizon)
        out[start : start + m] = state == 1
        overruns += int((state == 3).sum())
    return _report(out, int(out.sum()), seed, "plain", horizon, overruns)


# -- importance sampling --------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _rank(x, binom):
    r = 0
    c = 0
    for k in range(x.shape[0]):
        c += x[k]
        r += binom[c + k, k + 1]
    return r


# Each approximation kernel has the signature
# ``f(x, n, table, binom, pw, log_rho, r, weights, floor, F)`` and is passed to
# the sampler as a first-class function so the hot loop is specialized per kind.


@numba.njit(cache=True, inline="always")
def _total(x):
    s = 0
    for k in range(x.shape[0]):
        s += x[k]
    return s


@numba.njit(cache=True, inline="always")
def _f_table(x, n, table, binom, pw, log_rho, r, weights, floor, F):
    s = _total(x)
    if s == 0:
        return 0.0
    if s == n:
        return 1.0
    f = table[_rank(x, binom)]
    return f if f > floor else floor


@numba.njit(cache=True, inline="always")
def _f_chain(x, n, table, binom, pw, log_rho, r, weights, floor, F):
    """Closed form at ``T_n(x)`` by the chain recursion (see FastFormula); ``F`` is scratch.

    ``pw[k, n + m] = rho_{k+1}^m`` for ``|m| <= n`` replaces every exponential.
    """
    s = _total(x)
    if s == 0:
        return 0.0
    if s == n:
        return 1.0
    D = x.shape[0]
    for k in range(D):
        F[k] = 1.0
    for k0 in range(1, D):
        prod = 1.0
        fk = F[k0 - 1]
        for l in range(k0 + 1, D + 1):
            prod *= r[k0 - 1, l - 1] * pw[k0 - 1, n + x[l - 1]]
            F[l - 1] -= fk * prod
    total = 0.0
    tail = 0
    y1 = n - x[0]
    for d in range(1, D + 1):
        if d >= 2:
            tail += x[d - 1]
        total += weights[d - 1] * pw[d - 1, n + y1 - tail] * F[d - 1]
    return total if total > floor else floor


@numba.njit(cache=True, inline="always")
def _f_ones(x, n, table, binom, pw, log_rho, r, weights, floor, F):
    return 1.0


@numba.njit(inline="always")
def _is_transition(fh, x, probs, V, src, n, table, binom, pw, log_rho, r, weights, floor, cand, q, F):
    """Fill candidate states ``cand`` and tilted probabilities ``q``; return ``Z(x)``."""
    K, d = V.shape
    Z = 0.0
    for v in range(K):
        ok = src[v] < 0 or x[src[v]] > 0
        for k in range(d):
            cand[v, k] = x[k] + (V[v, k] if ok else 0)
        q[v] = probs[v] * fh(cand[v], n, table, binom, pw, log_rho, r, weights, floor, F)
        Z += q[v]
    for v in range(K):
        q[v] /= Z
    return Z


@numba.njit
def _is_advance(fh, X, state, steps, logw, U, probs, V, src, n, horizon, table, binom, pw, log_rho, r, weights, floor):
    B, T = U.shape
    K, d = V.shape
    cand = np.empty((K, d), dtype=np.int64)
    q = np.empty(K)
    F = np.empty(d)
    for b in range(B):
        if state[b] != 0:
            continue
        for t in range(T):
            x = X[b]
            Z = 0.0
            for v in range(K):
                ok = src[v] < 0 or x[src[v]] > 0
                for k in range(d):
                    cand[v, k] = x[k] + (V[v, k] if ok else 0)
                q[v] = probs[v] * fh(cand[v], n, table, binom, pw, log_rho, r, weights, floor, F)
                Z += q[v]
            for v in range(K):
                q[v] /= Z
            u = U[b, t]
            acc = 0.0
            v = K - 1
            for w in range(K):
                acc += q[w]
                if u < acc:
                    v = w
                    break
            while q[v] == 0.0:  # guard against rounding at the top of the cdf
                v -= 1
            logw[b] += math.log(Z) - math.log(q[v] * Z / probs[v])
            s = 0
            for k in range(d):
                X[b, k] = cand[v, k]
                s += cand[v, k]
            steps[b] += 1
            if s == n:
                state[b] = 1
                break
            if s == 0:
                state[b] = 2
                break
            if steps[b] >= horizon:
                state[b] = 3
                break


@numba.njit
def _is_step(fh, x, probs, V, src, n, table, binom, pw, log_rho, r, weights, floor, cand, q, F):
    return _is_transition(fh, x, probs, V, src, n, table, binom, pw, log_rho, r, weights, floor, cand, q, F)


class Approximation:
    """``f`` for the importance sampler: tabulated on ``A_n`` or evaluated on the fly.

    ``kind`` is ``"formula"`` (closed form, zero at the origin and one on
    ``{sum x = n}``) or ``"ones"`` (``f = 1``, which makes the sampler plain
    Monte Carlo).
    """

    def __init__(self, params: NetworkParams, n: int, kind: str = "formula", floor: float = DEFAULT_FLOOR, tabulate: bool | None = None):
        p = params.as_float()
        d = p.d
        self.n, self.floor, self.kind = n, floor, kind
        self.binom = np.zeros((1, 1), dtype=np.int64)
        self.table = np.zeros(1)
        self.pw = np.zeros((1, 1))
        self.log_rho = np.zeros(d)
        self.r = np.zeros((d, d))
        self.weights = np.zeros(d)
        if kind == "ones":
            self.kernel = _f_ones
            return
        if kind != "formula":
            raise ValueError(f"unknown approximation {kind!r}")
        ff = FastFormula(params)
        if tabulate is None:
            tabulate = count_states(d, n) <= TABLE_MAX_STATES
        if tabulate:
            rk = Ranker(d, n)
            self.kernel = _f_table
            self.binom = rk.binom
            self.table = ff.prob_x(n, rk.states)
        else:
            self.kernel = _f_chain
            self.log_rho = ff.log_rho.copy()
            self.pw = np.exp(np.outer(self.log_rho, np.arange(-n, n + 1)))
            self.r = np.ascontiguousarray(np.nan_to_num(ff.r).T)  # r[k0, l] for row access
            self.weights = ff.weights.copy()

    @property
    def tabulated(self) -> bool:
        return self.kernel is _f_table

    def args(self):
        return (self.table, self.binom, self.pw, self.log_rho, self.r, self.weights, self.floor)

    def __call__(self, x: Sequence[int]) -> float:
        x = np.asarray(x, dtype=np.int64)
        return float(self.kernel(x, self.n, *self.args(), np.empty(len(x))))


def is_estimate(
    params: NetworkParams,
    n: int,
    x: Sequence[int],
    samples: int,
    seed: int = 0,
    horizon_mult: int = DEFAULT_HORIZON_MULT,
    block: int = DEFAULT_BLOCK,
    approx: Approximation | str = "formula",
) -> SimReport:
    """Importance-sampling estimate of ``P_x(tau_n < tau_0)``.

    Paths that overrun the horizon contribute zero and are counted in
    ``overruns``.
    """
    x = _validate(params, n, x, samples)
    p = params.as_float()
    horizon = horizon_mult * n
    if x.sum() == n or x.sum() == 0:
        val = 1.0 if x.sum() == n else 0.0
        return _report(np.full(samples, val), int(val) * samples, seed, "is", horizon, 0)
    if isinstance(approx, str):
        approx = Approximation(params, n, approx)
    probs = np.array([p.lam, *p.mu])
    V = increment_matrix(p.d)
    src = _sources(p.d)
    out = np.empty(samples)
    overruns = 0
    hits = 0
    steps_total = 0
    for b, start in enumerate(range(0, samples, block)):
        m = min(block, samples - start)
        rng = _rng(seed, b)
        X = np.tile(x, (m, 1))
        state = np.zeros(m, dtype=np.int64)
        steps = np.zeros(m, dtype=np.int64)
        logw = np.zeros(m)
        while (state == 0).any():
            U = rng.random((m, TIME_CHUNK))
            _is_advance(approx.kernel, X, state, steps, logw, U, probs, V, src, n, horizon, *approx.args())
        out[start : start + m] = np.where(state == 1, np.exp(logw), 0.0)
        hits += int((state == 1).sum())
        overruns += int((state == 3).sum())
        steps_total += int(steps.sum())
    return _report(out, hits, seed, "is", horizon, overruns, mean_steps=steps_total / samples)


def is_weighted_mass(params: NetworkParams, n: int, x: Sequence[int], horizon: int, approx: Approximation) -> float:
    """``E_q[W 1{tau_n < tau_0, tau_n <= horizon}]`` by exhaustive propagation.

    Pushes the weighted mass ``q(path) W(path)`` forward state by state using
    the sampler's own transition routine; equals ``P_x(tau_n < tau_0, tau_n <= horizon)``
    when the likelihood ratios are right.
    """
    p = params.as_float()
    probs = np.array([p.lam, *p.mu])
    V = increment_matrix(p.d)
    src = _sources(p.d)
    K, d = V.shape
    cand = np.empty((K, d), dtype=np.int64)
    q = np.empty(K)
    F = np.empty(d)
    mass = {tuple(int(v) for v in x): 1.0}
    hit = 0.0
    for _ in range(horizon):
        nxt: dict = {}
        for state, w in mass.items():
            arr = np.asarray(state, dtype=np.int64)
            Z = _is_step(approx.kernel, arr, probs, V, src, n, *approx.args(), cand, q, F)
            for v in range(K):
                if q[v] == 0.0:
                    continue
                lr = probs[v] / q[v]
                key = tuple(int(c) for c in cand[v])
                contrib = w * q[v] * lr
                s = sum(key)
                if s == n:
                    hit += contrib
                elif s > 0:
                    nxt[key] = nxt.get(key, 0.0) + contrib
        mass = nxt
        if not mass:
            break
    return hit


# -- coupled X / X-bar paths -----------------------------------------------------


@dataclass
class CouplingReport:
    traces: int
    steps: int
    violations: dict  # relation name -> count of (trace, time) violations
    resolved: dict  # relation name -> number of resolved checks
    overruns: int
    seed: int

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())

    def to_dict(self) -> dict:
        return asdict(self) | {"ok": self.ok}


@dataclass
class CoupledTrace:
    """One coupled trajectory, recorded in full."""

    X: np.ndarray
    Xbar: np.ndarray
    sigma: list  # sigma_{0,1}, ..., sigma_{d-1,d} (None if not reached)
    tau_n: int | None
    tau_n_bar: int | None
    tau_0: int | None
    tau_0_bar: int | None


def _step_pair(X, Xb, v, V, src):
    """Apply increments ``v`` to X (fully constrained) and X-bar (free in queue 1)."""
    rows = np.arange(len(X))
    s = src[v]
    okx = (s < 0) | (X[rows, np.maximum(s, 0)] > 0)
    okb = (s <= 0) | (Xb[rows, np.maximum(s, 0)] > 0)
    X += V[v] * okx[:, None]
    Xb += V[v] * okb[:, None]


def coupled_run(
    params: NetworkParams,
    n: int,
    x,
    seed: int = 0,
    paths: int = 1,
    horizon_mult: int = DEFAULT_HORIZON_MULT,
    record: bool = False,
):
    """Drive X and X-bar with one increment stream and check the path relations.

    ``x`` is one start state or an array of start states (one per path).
    Checked at every step ``k``, with ``j`` the number of stage times
    ``sigma_{i,i+1}`` strictly before ``k``:

    * ``le_before``: ``Xbar(l) >= X(l)`` for ``l = 2..j+1`` when ``j < d``,
    * ``eq_before``: ``Xbar(l) == X(l)`` for ``l >= j+2`` when ``j < d``,
    * ``sum_before``: ``S(X) == S(Xbar)`` when ``j < d``,
    * ``sum_after``: ``S(X) >= S(Xbar)`` when ``j == d``.

    At the end, for level ``n``: ``sigma_{d-1,d} >= tau_n`` iff
    ``sigma_{d-1,d} >= taubar_n`` (``tau_equiv``) and ``tau_n == taubar_n``
    on that event (``tau_equal``); for every level ``m``, ``tau_m >= taubar_m``
    if ``m < S(x)`` and ``tau_m <= taubar_m`` if ``m > S(x)``
    (``tau_order``).  Censored times are infinite; a comparison is resolved
    unless both sides are censored.
    """
    p = params.as_float()
    d = p.d
    X0 = np.atleast_2d(np.asarray(x, dtype=np.int64))
    if len(X0) == 1:
        X0 = np.tile(X0, (paths, 1))
    P = len(X0)
    S0 = X0.sum(axis=1)
    if ((S0 <= 0) | (S0 >= n)).any():
        raise ValueError("coupled runs need 0 < S(x) < n")
    horizon = horizon_mult * n
    rng = _rng(seed, 0)
    cum = np.cumsum([p.lam, *p.mu])
    V = increment_matrix(d)
    src = _sources(d)
    X, Xb = X0.copy(), X0.copy()
    INF = np.iinfo(np.int64).max
    sigma = np.full((P, d), INF, dtype=np.int64)
    stage = np.zeros(P, dtype=np.int64)
    levels = n + 1
    tau = np.full((P, levels), INF, dtype=np.int64)
    taub = np.full((P, levels), INF, dtype=np.int64)
    names = ("le_before", "eq_before", "sum_before", "sum_after", "tau_equiv", "tau_equal", "tau_order")
    viol = dict.fromkeys(names, 0)
    resolved = dict.fromkeys(names, 0)
    rows = np.arange(P)
    lidx = np.arange(d)[None, :]
    hist = [] if record else None
    for k in range(horizon + 1):
        if record:
            hist.append((X[0].copy(), Xb[0].copy()))
        # relations at time k use j = #{sigma < k} = current stage
        S, Sb = X.sum(axis=1), Xb.sum(axis=1)
        pre = stage < d
        # coordinates l (1-based) 2..j+1 -> 0-based 1..j ; l >= j+2 -> 0-based >= j+1
        le_mask = (lidx >= 1) & (lidx <= stage[:, None])
        eq_mask = lidx >= stage[:, None] + 1
        bad_le = ((Xb < X) & le_mask).any(axis=1) & pre
        bad_eq = ((Xb != X) & eq_mask).any(axis=1) & pre
        viol["le_before"] += int(bad_le.sum())
        viol["eq_before"] += int(bad_eq.sum())
        viol["sum_before"] += int(((S != Sb) & pre).sum())
        viol["sum_after"] += int(((S < Sb) & ~pre).sum())
        resolved["le_before"] += int(pre.sum())
        resolved["eq_before"] += int(pre.sum())
        resolved["sum_before"] += int(pre.sum())
        resolved["sum_after"] += int((~pre).sum())
        # first hitting times of every level
        for arr, tot in ((tau, S), (taub, Sb)):
            ok = (tot >= 0) & (tot < levels)
            r_, c_ = rows[ok], tot[ok]
            first = arr[r_, c_] == INF
            arr[r_[first], c_[first]] = k
        # stage times observed at time k
        at0 = (stage == 0) & (X[:, 0] == 0)
        col = np.minimum(stage, d - 1)
        atj = (stage >= 1) & (stage < d) & (X[rows, col] == 0)
        hitm = at0 | atj
        sigma[rows[hitm], stage[hitm]] = k
        stage = stage + hitm
        if k == horizon:
            break
        u = rng.random(P)
        v = np.searchsorted(cum, u, side="right").clip(max=d)
        _step_pair(X, Xb, v, V, src)
    # end-of-run lemmas
    sd = sigma[:, d - 1]
    tn, tbn = tau[:, n], taub[:, n]
    lhs_res = (sd != INF) | (tn != INF)
    rhs_res = (sd != INF) | (tbn != INF)
    both = lhs_res & rhs_res
    resolved["tau_equiv"] = int(both.sum())
    viol["tau_equiv"] = int((((sd >= tn) != (sd >= tbn)) & both).sum())
    ev = both & (sd >= tn)
    resolved["tau_equal"] = int(ev.sum())
    viol["tau_equal"] = int((ev & (tn != tbn)).sum())
    for m in range(levels):
        a, b = tau[:, m], taub[:, m]
        res = (a != INF) | (b != INF)
        below = S0 > m
        above = S0 < m
        viol["tau_order"] += int((res & below & (a < b)).sum() + (res & above & (a > b)).sum())
        resolved["tau_order"] += int((res & (below | above)).sum())
    overruns = int(((tau[:, 0] == INF) & (tau[:, n] == INF)).sum())
    report = CouplingReport(P, horizon, viol, resolved, overruns, seed)
    if not record:
        return report

    def opt(t):
        return None if t == INF else int(t)

    trace = CoupledTrace(
        np.array([h[0] for h in hist]),
        np.array([h[1] for h in hist]),
        [opt(s) for s in sigma[0]],
        opt(tau[0, n]),
        opt(taub[0, n]),
        opt(tau[0, 0]),
        opt(taub[0, 0]),
    )
    return report, trace


# -- supermartingale along X paths -----------------------------------------------


@dataclass
class SupermartingaleReport:
    paths: int
    checks: int
    max_violation: float  # max of (E[S_{k+1} | F_k] - S_k) / S'_k
    max_abs_violation: float
    jump_checks: int
    jump_violations: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def supermartingale_check(
    params: NetworkParams,
    n: int,
    r,
    x: Sequence[int],
    seed: int = 0,
    paths: int = 1000,
    horizon_mult: int = DEFAULT_HORIZON_MULT,
) -> SupermartingaleReport:
    """One-step drift of ``S_k = S'_k - k lambda (1/r - 1) sum(gamma) r^n`` along X paths.

    ``S'_k = Gamma_j h_{2,j,r}(T_n X_k)`` in stage ``j = #{sigma < k}``,
    with ``h_{2,0,r} = r^n``.  The stage for time ``k + 1`` is known at time
    ``k``, so ``E[S'_{k+1} | F_k]`` is an exact finite sum over increments.
    At each stage time ``sigma_{j-1,j}`` (``j >= 2``) the ratio
    ``h_{2,j-1,r}/h_{2,j,r} >= gamma_{j-1,j}`` is also checked.
    """
    from .bounds import gamma_constants, h2kr_array, stage_value

    p = params.as_float()
    d = p.d
    sp = gamma_constants(p, float(r))
    rr = float(sp.r)
    drift = p.lam * (1 / rr - 1) * float(sum(sp.gamma)) * rr ** n
    x = np.asarray(x, dtype=np.int64)
    X = np.tile(x, (paths, 1))
    rng = _rng(seed, 0)
    cum = np.cumsum([p.lam, *p.mu])
    probs = np.array([p.lam, *p.mu])
    V = increment_matrix(d)
    src = _sources(d)
    stage = np.zeros(paths, dtype=np.int64)  # #{sigma < k}
    alive = np.ones(paths, dtype=bool)
    rows = np.arange(paths)
    worst = -np.inf
    worst_abs = -np.inf
    checks = 0
    jump_checks = jump_viol = 0
    pair = np.asarray([float(g) for g in sp.gamma_pair])
    for k in range(horizon_mult * n):
        S = X.sum(axis=1)
        alive &= (S > 0) & (S < n)
        if not alive.any():
            break
        Xa, st = X[alive], stage[alive]
        # stage time observed at k -> stage for k + 1
        at0 = (st == 0) & (Xa[:, 0] == 0)
        col = np.minimum(st, d - 1)
        atj = (st >= 1) & (st < d) & (Xa[np.arange(len(Xa)), col] == 0)
        nxt = st + (at0 | atj)
        # jump inequality at sigma_{j-1,j} for j >= 2 (stage advances from j-1 to j)
        jm = atj
        if jm.any():
            j_new = nxt[jm]
            Y = Xa[jm].astype(float)
            Y[:, 0] = n - Y[:, 0]
            for j in np.unique(j_new):
                sel = j_new == j
                ratio = h2kr_array(p, sp, Y[sel], int(j) - 1) / h2kr_array(p, sp, Y[sel], int(j))
                jump_checks += int(sel.sum())
                jump_viol += int((ratio < pair[int(j) - 2] * (1 - 1e-12)).sum())
        cur = stage_value(p, sp, n, Xa, st)
        expect = np.zeros(len(Xa))
        for v in range(d + 1):
            s = src[v]
            ok = (s < 0) | (Xa[:, max(s, 0)] > 0)
            Xn = Xa + V[v] * ok[:, None]
            expect += probs[v] * stage_value(p, sp, n, Xn, nxt)
        gap = expect - cur - drift
        worst = max(worst, float(np.max(gap / cur)))
        worst_abs = max(worst_abs, float(np.max(gap)))
        checks += len(Xa)
        stage[alive] = nxt
        u = rng.random(paths)
        v = np.searchsorted(cum, u, side="right").clip(max=d)
        s = src[v]
        ok = (s < 0) | (X[rows, np.maximum(s, 0)] > 0)
        X = X + V[v] * (ok & alive)[:, None]
    return SupermartingaleReport(paths, checks, worst, worst_abs, jump_checks, jump_viol, seed)
