"""Command-line front end.

Every subcommand reads the network from ``--params`` (a JSON file with
``"lambda"`` and ``"mu"``; ``"p/q"`` strings are exact) and writes JSON to
stdout or ``--out``; grids go to CSV.  Exit codes: 0 ok, 2 validation,
3 numerical failure (including a failed verification), 4 memory budget.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bounds, oracle, simulate, tandem_formula
from .jackson_systems import JacksonRouting, verify_system
from .loglinear import SurfaceError
from .model import NetworkParams, ParameterError, in_boundary_B

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_BUDGET = 0, 2, 3, 4


class VerificationFailed(ArithmeticError):
    """A residual exceeded its tolerance."""


# -- helpers --------------------------------------------------------------------


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ParameterError(f"expected comma-separated integers, got {text!r}") from None


def default_params(d: int) -> NetworkParams:
    """Distinct exact rates ``lambda : mu_i = 1 : (i + 1)``, normalized."""
    w = [Fraction(1)] + [Fraction(i + 1) for i in range(1, d + 1)]
    total = sum(w)
    return NetworkParams(w[0] / total, tuple(v / total for v in w[1:]))


def load_params(args) -> NetworkParams:
    if getattr(args, "params", None):
        try:
            params = NetworkParams.from_json(Path(args.params).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ParameterError(f"cannot read params: {exc}") from None
    elif getattr(args, "d", None):
        params = default_params(args.d)
    else:
        raise ParameterError("give --params FILE (or --d for the default rates)")
    if args.mode == "float":
        return params.as_float()
    if not params.exact:
        raise ParameterError("rational mode needs exact rates; write them as \"p/q\" strings")
    return params


def _num(v):
    """JSON form of a number: exact values keep a ``"p/q"`` string."""
    if isinstance(v, Fraction):
        return {"exact": f"{v.numerator}/{v.denominator}", "float": float(v)}
    return float(v)


def emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _write_csv(path: str | None, header: Sequence[str], rows, comment: str | None = None) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if path:
            fh.close()


def _fmt(v) -> str:
    return repr(float(v))


def _exponent(p, n: int) -> float:
    """``-log(p) / n``; infinite at ``p = 0``."""
    p = float(p)
    return -math.log(p) / n if p > 0 else math.inf


def slice_rows(params: NetworkParams, n: int, axes: Sequence[int], grid, eps: float = 0.0) -> list:
    """Per-state comparison of oracle and approximation on a 2-d slice, origin omitted.

    Each row is ``(x, P, f, V_n, W_n, rel_err, prob_rel_err, bound, in_Rbar)``
    with ``rel_err = |V_n - W_n| / V_n`` (zero where both vanish).
    """
    ff = tandem_formula.FastFormula(params)
    rows = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            if i == 0 and j == 0:
                continue
            x = [0] * params.d
            x[axes[0] - 1], x[axes[1] - 1] = i, j
            P = grid.value(x)
            # both sides are 1 on the target set; the formula only reaches it up to rounding
            f = 1.0 if i + j == n else float(ff.prob_x(n, np.asarray([x]))[0])
            V, W = _exponent(P, n), _exponent(f, n)
            rel = abs(V - W) / V if V > 0 else (0.0 if W == 0 else math.inf)
            bound = bounds.relative_error_bound(params, n, x, eps)
            rows.append((tuple(x), P, f, V, W, rel, abs(P - f) / P, bound, bounds.in_Rbar(params, n, x)))
    return rows


# -- subcommands ----------------------------------------------------------------


def cmd_approx(args) -> int:
    params = load_params(args)
    if (args.x is None) == (args.y is None):
        raise ParameterError("give exactly one of --x (with --n) or --y")
    if args.x is not None:
        if args.n is None:
            raise ParameterError("--x needs --n")
        x = _ints(args.x)
        value = tandem_formula.approx_prob_x(params, args.n, x)
        payload = {"n": args.n, "x": list(x), "probability": _num(value), "W_n": _exponent(value, args.n)}
        y = (args.n - x[0],) + x[1:]
    else:
        y = _ints(args.y)
        value = tandem_formula.prob_tau_finite(params, y)
        payload = {"y": list(y), "P_tau_finite": _num(value)}
    payload["params"] = params.to_dict()
    payload["on_boundary"] = in_boundary_B(y)
    if args.terms:
        rows = [
            (d, " ".join(map(str, a)), _fmt(c), _fmt(beta), " ".join(_fmt(v) for v in alpha), _fmt(val))
            for d, a, c, beta, alpha, val in tandem_formula.term_breakdown(params, y)
        ]
        _write_csv(args.terms, ["d", "subset", "c", "beta", "alpha", "value"], rows)
    emit(payload, args.out)
    return EXIT_OK


def cmd_exact(args) -> int:
    params = load_params(args).as_float()
    grid = oracle.solve_exact(params, args.n, tol=args.tol, method=args.method)
    payload = {
        "params": params.to_dict(),
        "n": args.n,
        "states": int(len(grid.values)),
        "iterations": int(grid.iterations),
        "residual": float(grid.residual),
    }
    if args.x:
        payload["x"] = list(_ints(args.x))
        payload["probability"] = grid.value(payload["x"])
        payload["V_n"] = _exponent(payload["probability"], args.n)
    if args.csv:
        grid.to_csv(args.csv)
    if args.binary:
        grid.to_binary(args.binary)
    emit(payload, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    params = load_params(args)
    x = _ints(args.x)
    if args.method == "mc":
        rep = simulate.mc_estimate(params, args.n, x, args.samples, seed=args.seed, horizon_mult=args.horizon_mult)
    else:
        approx = simulate.Approximation(params, args.n, kind=args.approx)
        rep = simulate.is_estimate(params, args.n, x, args.samples, seed=args.seed, horizon_mult=args.horizon_mult, approx=approx)
    emit({"params": params.to_dict(), "n": args.n, "x": list(x), **rep.to_dict()}, args.out)
    return EXIT_OK


def cmd_bounds(args) -> int:
    params = load_params(args)
    payload: dict = {"params": params.to_dict()}
    r = Fraction(args.r) if args.r and params.exact else (float(args.r) if args.r else None)
    sp = bounds.gamma_constants(params, r)
    payload["r"] = _num(sp.r)
    payload["gamma"] = [_num(g) for g in sp.gamma]
    if args.y:
        y = _ints(args.y)
        payload["y"] = list(y)
        payload["upper_bound"] = _num(bounds.upper_bound_prob(params, y, sp.r))
    if args.x:
        if args.n is None:
            raise ParameterError("--x needs --n")
        x = _ints(args.x)
        payload.update(
            n=args.n,
            x=list(x),
            lower_bound=_num(bounds.lower_bound_gn(params, args.n, x)),
            upper_bound_Tn=_num(bounds.upper_bound_prob(params, (args.n - x[0],) + x[1:], sp.r)),
            in_Rbar=bounds.in_Rbar(params, args.n, x),
            rate_g=bounds.rate_g(params, [v / args.n for v in x]),
            relative_error_bound=bounds.relative_error_bound(params, args.n, x, args.eps),
        )
    emit(payload, args.out)
    return EXIT_OK


def _verify_system(args) -> dict:
    params = load_params(args)
    routing = JacksonRouting.tandem(params)
    out = {}
    for d in range(1, params.d + 1):
        G, sol = tandem_formula.tandem_solution(d, params)
        rep = verify_system(routing, G, sol, tol=args.tol)
        out[str(d)] = rep.to_dict()
    return {"passed": all(v["passed"] for v in out.values()), "params": params.to_dict(), "systems": out}


def _verify_formula(args) -> dict:
    params = load_params(args)
    tol = args.tol if args.tol is not None else 1e-10
    g = args.grid
    zero = Fraction(0) if params.exact else 0.0
    boundary_worst, residual_worst = zero, 0.0
    for rest in np.ndindex(*(min(g, 4),) * (params.d - 1)):
        y = (sum(rest),) + tuple(int(v) for v in rest)
        boundary_worst = max(boundary_worst, abs(tandem_formula.prob_tau_finite(params, y) - 1))
    h = lambda y: tandem_formula.prob_tau_finite(params, y)  # noqa: E731
    for ybar in range(1, g + 1):
        for rest in np.ndindex(*(min(g, 4),) * (params.d - 1)):
            y = (ybar + sum(rest),) + tuple(int(v) for v in rest)
            hy = h(y)
            res = bounds.direct_residual(params, h, y)
            residual_worst = max(residual_worst, abs(float(res)) / float(hy))
    ok_b = boundary_worst == 0 if params.exact else float(boundary_worst) <= tol
    ok_r = residual_worst == 0 if params.exact else residual_worst <= tol
    return {
        "passed": bool(ok_b and ok_r),
        "params": params.to_dict(),
        "boundary_worst": float(boundary_worst),
        "residual_worst": residual_worst,
    }


def _verify_bounds(args) -> dict:
    params = load_params(args)
    p = params.as_float()
    sp = bounds.gamma_constants(p)
    rng = np.random.default_rng(args.seed)
    worst = -math.inf
    for _ in range(args.samples):
        y = tuple(int(v) for v in rng.integers(0, 6, p.d))
        y = (y[0] + sum(y[1:]),) + y[1:]
        for k in range(1, p.d + 1):
            h = lambda z, k=k: bounds.eval_h2kr(p, k, sp.r, z, sp)  # noqa: E731
            worst = max(worst, float(bounds.direct_residual(p, h, y)) / h(y))
    x = tuple([1] + [0] * (p.d - 1))
    sm = simulate.supermartingale_check(p, args.n, sp.r, x, seed=args.seed, paths=args.paths)
    return {
        "passed": worst <= 1e-12 and sm.max_violation <= 1e-12 and sm.jump_violations == 0,
        "params": p.to_dict(),
        "superharmonic_worst": worst,
        "supermartingale": sm.to_dict(),
    }


def _verify_coupling(args) -> dict:
    params = load_params(args)
    x = tuple([1] + [0] * (params.d - 1))
    rep = simulate.coupled_run(params, args.n, x, seed=args.seed, paths=args.paths)
    return {"passed": rep.ok, "params": params.as_float().to_dict(), **rep.to_dict()}


VERIFIERS = {"system": _verify_system, "formula": _verify_formula, "bounds": _verify_bounds, "coupling": _verify_coupling}


def cmd_verify(args) -> int:
    payload = VERIFIERS[args.target](args)
    payload["target"] = args.target
    emit(payload, args.out)
    if not payload["passed"]:
        raise VerificationFailed(f"verify {args.target}: tolerance exceeded")
    return EXIT_OK


def cmd_sweep(args) -> int:
    params = load_params(args).as_float()
    n = args.n
    axes = _ints(args.slice)
    if len(axes) != 2 or not all(1 <= a <= params.d for a in axes) or axes[0] == axes[1]:
        raise ParameterError("--slice takes two distinct 1-based coordinates, e.g. 1,2")
    grid = oracle.solve_exact(params, n, tol=args.tol)
    rows = [
        (" ".join(map(str, r[0])), *(_fmt(v) for v in r[1:8]), int(r[8]))
        for r in slice_rows(params, n, axes, grid, args.eps)
    ]
    comment = (
        f"n={n} slice={args.slice}; P oracle probability, f closed-form approximation, "
        f"V_n=-log(P)/n, W_n=-log(f)/n, rel_err=|V_n-W_n|/V_n, prob_rel_err=|P-f|/P, "
        f"bound=rho^(n(1-g(x/n)-{args.eps})), in_Rbar 1 where the bound applies"
    )
    _write_csv(args.out, ["x", "P", "f", "V_n", "W_n", "rel_err", "prob_rel_err", "bound", "in_Rbar"], rows, comment)
    return EXIT_OK


def cmd_couple(args) -> int:
    params = load_params(args)
    x = _ints(args.x)
    rep = simulate.coupled_run(params, args.n, x, seed=args.seed, paths=args.paths, horizon_mult=args.horizon_mult)
    emit({"params": params.as_float().to_dict(), "n": args.n, "x": list(x), **rep.to_dict()}, args.out)
    return EXIT_OK if rep.ok else EXIT_NUMERIC


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tandem-overflow", description="Overflow probabilities of tandem queues.")
    # TODO: spread IS blocks over --threads workers; every kernel runs serially for now.
    parser.add_argument("--threads", type=int, default=1, help="worker threads (default 1, reproducible)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeded=False):
        p.add_argument("--params", help="JSON file with lambda and mu")
        p.add_argument("--mode", choices=("float", "rational"), default="float")
        p.add_argument("--out", help="output file (default stdout)")
        if seeded:
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("approx", help="closed-form approximation")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--x", help="state of X, e.g. 1,0,0,0")
    p.add_argument("--y", help="state of Y in B")
    p.add_argument("--terms", help="write the per-term breakdown to this CSV")
    p.set_defaults(func=cmd_approx)

    p = sub.add_parser("exact", help="iterative solve of the harmonic equation on A_n")
    common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--x")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--method", choices=("auto", "gs", "direct"), default="auto")
    p.add_argument("--csv", help="write the full grid as CSV")
    p.add_argument("--binary", help="write the full grid in the binary format")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("simulate", help="plain or importance-sampling Monte Carlo")
    common(p, seeded=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--method", choices=("is", "mc"), default="is")
    p.add_argument("--approx", choices=("formula", "ones"), default="formula")
    p.add_argument("--horizon-mult", type=int, default=simulate.DEFAULT_HORIZON_MULT)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bounds", help="superharmonic upper and subharmonic lower bounds")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--x")
    p.add_argument("--y")
    p.add_argument("--r", help="r in (rho, 1); default (rho + 1)/2")
    p.add_argument("--eps", type=float, default=0.0)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify", help="residual checks; nonzero exit on failure")
    p.add_argument("target", choices=tuple(VERIFIERS))
    common(p, seeded=True)
    p.add_argument("--d", type=int, help="use default distinct rates of this dimension")
    p.add_argument("--tol", type=float)
    p.add_argument("--grid", type=int, default=10)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--samples", type=int, default=1000)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="relative error of the approximation on a 2-d slice")
    common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--slice", default="1,2", help="two 1-based coordinates that vary")
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("couple", help="coupled X / X-bar path checks")
    common(p, seeded=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--horizon-mult", type=int, default=simulate.DEFAULT_HORIZON_MULT)
    p.set_defaults(func=cmd_couple)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except oracle.BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ParameterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ArithmeticError, SurfaceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
