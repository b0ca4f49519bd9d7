"""Super- and subharmonic bounds on the overflow probability.

``h_{k,r}(y) = r^(y1 - sum_{j=2}^k y_j)`` and their positive combinations
``h_{2,k,r} = sum_{j<=k} gamma_j h_{j,r}`` are Y-superharmonic for
``r`` in ``(rho, 1)``; ``h_{2,d,r} / gamma_d`` bounds ``P_y(tau < inf)``.
``g_n(x) = max_i rho_i^(n - sum_{j<=i} x_j)`` gives the lower bound
``g_n(x) - rho^n <= P_x(tau_n < tau_0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .model import NetworkParams, affine_map_Tn, maximal_set, step_y


@dataclass(frozen=True)
class SuperharmonicParams:
    r: object
    gamma: tuple  # gamma_1..gamma_d
    gamma_pair: tuple  # gamma_{k-1,k} for k = 2..d
    Gamma: tuple  # Gamma_1..Gamma_d

    def stage_Gamma(self, j: int):
        """``Gamma_j`` with the convention ``Gamma_0 = Gamma_1 = 1``."""
        return 1 if j <= 1 else self.Gamma[j - 1]


def default_r(params: NetworkParams):
    return (params.rho + 1) / 2


def _check_r(params: NetworkParams, r):
    if not params.rho < r < 1:
        raise ValueError(f"r must lie in (rho, 1) = ({float(params.rho):.6g}, 1), got {r}")


def drift_factor(params: NetworkParams, k: int, r):
    """``lambda (1/r - 1) + mu_k (r - 1)``; strictly negative for r in (rho, 1)."""
    return params.lam * (1 / r - 1) + params.mu[k - 1] * (r - 1)


def gamma_constants(params: NetworkParams, r=None) -> SuperharmonicParams:
    """``gamma_1 = 1``, ``gamma_k = (1/d) min_{j<k} gamma_j (-drift_j) / (lambda (1/r - 1))``."""
    if r is None:
        r = default_r(params)
    _check_r(params, r)
    d = params.d
    lam = params.lam
    one = Fraction(1) if isinstance(r, Fraction) and params.exact else 1.0
    gamma = [one]
    den = lam * (1 / r - 1)
    for k in range(2, d + 1):
        best = min(gamma[j - 1] * -drift_factor(params, j, r) for j in range(1, k))
        gamma.append(best / (d * den))
    pair = tuple(gamma[k - 2] / (gamma[k - 2] + gamma[k - 1]) for k in range(2, d + 1))
    Gamma = [one]
    for q in pair:
        Gamma.append(Gamma[-1] * q)
    return SuperharmonicParams(r, tuple(gamma), pair, tuple(Gamma))


def eval_hkr(params: NetworkParams, k: int, r, y: Sequence[int]):
    return r ** (y[0] - sum(y[1:k]))


def superharmonic_residual_hkr(params: NetworkParams, k: int, r, y: Sequence[int]):
    """Closed-form ``E_y[h_{k,r}(Y_1)] - h_{k,r}(y)``."""
    h = eval_hkr(params, k, r, y)
    gate = 1 if k == 1 or y[k - 1] > 0 else 0
    return h * (params.lam * (1 / r - 1) + gate * params.mu[k - 1] * (r - 1))


def direct_residual(params: NetworkParams, h, y: Sequence[int]):
    """``E_y[h(Y_1)] - h(y)`` by enumerating the tandem increments."""
    y = tuple(y)
    vals = [inc.prob * h(step_y(params, y, inc)) for inc in params.increments()]
    vals.append(-h(y))
    if all(isinstance(v, (int, Fraction)) for v in vals):
        return sum(vals, Fraction(0))
    return math.fsum(vals)


def eval_h2kr(params: NetworkParams, k: int, r, y: Sequence[int], sp: SuperharmonicParams | None = None):
    """``h_{2,k,r}(y) = sum_{j=1}^k gamma_j h_{j,r}(y)``; ``k = 0`` gives ``1``."""
    if sp is None:
        sp = gamma_constants(params, r)
    return sum(sp.gamma[j - 1] * eval_hkr(params, j, sp.r, y) for j in range(1, k + 1))


def upper_bound_prob(params: NetworkParams, y: Sequence[int], r=None):
    """``h_{2,d,r}(y) / gamma_d``, an upper bound on ``P_y(tau < inf)``."""
    sp = gamma_constants(params, r)
    return eval_h2kr(params, params.d, sp.r, y, sp) / sp.gamma[-1]


def jump_ratio(params: NetworkParams, k: int, y: Sequence[int], sp: SuperharmonicParams):
    """``h_{2,k-1,r}(y) / h_{2,k,r}(y)``; at least ``gamma_{k-1,k}`` on ``{y_k = 0}``."""
    return eval_h2kr(params, k - 1, sp.r, y, sp) / eval_h2kr(params, k, sp.r, y, sp)


# -- lower bound and rate function ----------------------------------------------


def g_n(params: NetworkParams, n: int, x: Sequence[int], over=None):
    """``max_i rho_i^(n - sum_{j<=i} x_j)`` over ``over`` (default all indices)."""
    rho = params.rhos
    idx = range(1, params.d + 1) if over is None else over
    return max(rho[i - 1] ** int(n - sum(x[:i])) for i in idx)


def lower_bound_gn(params: NetworkParams, n: int, x: Sequence[int]):
    """``g_n(x) - rho^n``, a lower bound on ``P_x(tau_n < tau_0)``."""
    return g_n(params, n, x) - params.rho ** n


def rate_g(params: NetworkParams, x_scaled: Sequence) -> float:
    """``g(x) = min_{i in M} (1 - sum_{j<=i} x_j) log_rho rho_i``, so ``g_n(x) = rho^(n g(x/n))``."""
    lr = math.log(params.rho)
    rho = params.rhos
    return min((1 - float(sum(x_scaled[:i]))) * math.log(rho[i - 1]) / lr for i in maximal_set(params))


def in_Rbar(params: NetworkParams, n: int, x: Sequence[int]) -> bool:
    """``sum_{j<=i} x_j >= 1 + n (1 - log rho / log rho_i)`` for some ``i`` in ``M``.

    Equivalent to ``rho_i^(n + 1 - s_i) >= rho^n``; compared exactly when the
    rates are rational.
    """
    rho_max = params.rho
    rho = params.rhos
    for i in maximal_set(params):
        s = int(sum(x[:i]))  # numpy ints overflow inside Fraction powers
        e = n + 1 - s
        if params.exact:
            if e <= 0 or rho[i - 1] ** e >= rho_max ** n:
                return True
        elif e * math.log(rho[i - 1]) >= n * math.log(rho_max) - 1e-12 * n:
            return True
    return False


def relative_error_bound(params: NetworkParams, n: int, x: Sequence[int], eps: float) -> float:
    """``rho^(n (1 - g(x/n) - eps))``."""
    g = rate_g(params, [v / n for v in x])
    return float(params.rho) ** (n * (1 - g - eps))


def decay_rate(params: NetworkParams, x_scaled: Sequence) -> float:
    """Asymptotic decay rate ``-log(rho) (1 - g(x))`` of the relative error."""
    return -math.log(params.rho) * (1 - rate_g(params, x_scaled))


# -- vectorized helpers ---------------------------------------------------------


def h2kr_array(params: NetworkParams, sp: SuperharmonicParams, Y: np.ndarray, k: int) -> np.ndarray:
    """``h_{2,k,r}`` on the rows of ``Y`` (float), ``k = 0`` gives ones."""
    Y = np.asarray(Y, dtype=float)
    r = float(sp.r)
    expo = Y[:, [0]] - np.concatenate([np.zeros((len(Y), 1)), np.cumsum(Y[:, 1:], axis=1)], axis=1)
    g = np.asarray([float(v) for v in sp.gamma])
    if k == 0:
        return np.ones(len(Y))
    return (g[None, :k] * r ** expo[:, :k]).sum(axis=1)


def stage_value(params: NetworkParams, sp: SuperharmonicParams, n: int, X: np.ndarray, stage: np.ndarray) -> np.ndarray:
    """``S'``: ``Gamma_j h_{2,j,r}(T_n x)`` with ``h_{2,0,r} = r^n`` for stage ``j = 0``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    stage = np.broadcast_to(np.asarray(stage), (len(X),))
    Y = X.copy()
    Y[:, 0] = n - X[:, 0]
    r = float(sp.r)
    out = np.empty(len(X))
    for j in np.unique(stage):
        m = stage == j
        if j == 0:
            out[m] = r ** n
        else:
            out[m] = float(sp.stage_Gamma(int(j))) * h2kr_array(params, sp, Y[m], int(j))
    return out


def Tn_h2kr(params: NetworkParams, n: int, x: Sequence[int], k: int, sp: SuperharmonicParams):
    return eval_h2kr(params, k, sp.r, affine_map_Tn(n, x), sp)
