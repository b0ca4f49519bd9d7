"""Labeled regular graphs, harmonic systems and simple extensions.

Vertices are bitmasks over ``{1..d}``: bit ``k - 1`` set means ``k`` belongs
to the subset.  Labels are integers in ``2..D``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Callable, Iterable, Sequence

from .loglinear import (
    C_general,
    JacksonRouting,
    LogLinearTerm,
    char_poly_general,
    conjugate_product,
    eval_term,
)


def mask_of(subset: Iterable[int]) -> int:
    m = 0
    for k in subset:
        m |= 1 << (k - 1)
    return m


def members(mask: int) -> tuple:
    """Sorted elements of a bitmask subset."""
    out = []
    k = 1
    while mask:
        if mask & 1:
            out.append(k)
        mask >>= 1
        k += 1
    return tuple(out)


class GraphError(ValueError):
    pass


@dataclass
class LabeledGraph:
    """Undirected graph whose edges carry a label; loops carry label sets."""

    labels: frozenset
    vertices: list
    edges: dict = field(default_factory=dict)  # frozenset({u, v}) -> label
    loops: dict = field(default_factory=dict)  # v -> frozenset of labels

    def edge(self, u: int, v: int):
        return self.edges.get(frozenset((u, v)))

    def neighbours(self, v: int):
        """Yield ``(u, label)`` for every edge at ``v``."""
        for key, lab in self.edges.items():
            if v in key:
                (u,) = key - {v}
                yield u, lab

    def regularity_defects(self) -> list:
        """``(vertex, label, count)`` for every label not incident exactly once."""
        vs = set(self.vertices)
        bad = []
        counts = {v: {l: 0 for l in self.labels} for v in self.vertices}
        for key, lab in self.edges.items():
            if len(key) != 2 or not key <= vs:
                raise GraphError(f"edge {sorted(key)} is not between two graph vertices")
            if lab not in self.labels:
                raise GraphError(f"edge label {lab} not in the label set")
            for v in key:
                counts[v][lab] += 1
        for v, labs in self.loops.items():
            if v not in vs:
                raise GraphError(f"loop on unknown vertex {v}")
            for lab in labs:
                if lab not in self.labels:
                    raise GraphError(f"loop label {lab} not in the label set")
                counts[v][lab] += 1
        for v in self.vertices:
            for lab in sorted(self.labels):
                if counts[v][lab] != 1:
                    bad.append((v, lab, counts[v][lab]))
        return bad

    def is_regular(self) -> bool:
        return not self.regularity_defects()

    def to_dict(self) -> dict:
        return {
            "vertices": [list(members(v)) for v in self.vertices],
            "edges": [
                [list(members(u)), list(members(v)), lab]
                for (u, v), lab in sorted(
                    ((tuple(sorted(k)), lab) for k, lab in self.edges.items())
                )
            ],
            "loops": {
                ",".join(map(str, members(v))): sorted(self.loops.get(v, ()))
                for v in self.vertices
            },
            "labels": sorted(self.labels),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "LabeledGraph":
        vertices = [mask_of(v) for v in data["vertices"]]
        edges = {}
        for u, v, lab in data["edges"]:
            edges[frozenset((mask_of(u), mask_of(v)))] = int(lab)
        loops = {}
        for key, labs in data.get("loops", {}).items():
            elems = [int(k) for k in str(key).split(",") if k.strip()]
            loops[mask_of(elems)] = frozenset(int(l) for l in labs)
        if "labels" in data:
            labels = frozenset(int(l) for l in data["labels"])
        else:
            labels = frozenset(edges.values()).union(*loops.values()) if loops else frozenset(edges.values())
        return cls(labels, vertices, edges, loops)

    @classmethod
    def from_json(cls, text: str) -> "LabeledGraph":
        return cls.from_dict(json.loads(text))


@dataclass
class HarmonicSolution:
    """Common ``beta`` plus per-vertex ``alpha`` vectors and coefficients."""

    beta: object
    alpha: dict  # vertex -> tuple over indices 2..d
    c: dict  # vertex -> coefficient

    def terms(self) -> list:
        return [LogLinearTerm(self.c[v], self.beta, tuple(self.alpha[v])) for v in self.alpha]


@dataclass
class ConditionResult:
    passed: bool
    worst: float
    witness: object = None


@dataclass
class VerificationReport:
    conditions: dict  # name -> ConditionResult

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    @property
    def worst(self) -> float:
        return max((c.worst for c in self.conditions.values() if c.worst != math.inf), default=0.0)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "conditions": {
                k: {"passed": c.passed, "worst": float(c.worst), "witness": _jsonable(c.witness)}
                for k, c in self.conditions.items()
            },
        }


def _jsonable(w):
    if w is None:
        return None
    if isinstance(w, tuple):
        return [_jsonable(x) for x in w]
    if isinstance(w, int):
        return list(members(w)) if w > 0 else w
    return str(w)


CONDITIONS = ("surface", "distinct", "conjugate", "coefficients", "loops")


def verify_system(
    routing: JacksonRouting,
    G: LabeledGraph,
    sol: HarmonicSolution,
    tol: float | None = None,
) -> VerificationReport:
    """Check the five defining conditions of a harmonic system.

    ``tol=None`` means exact comparisons when every number is rational and
    ``1e-10`` otherwise.  Residuals for the coefficient ratios are relative
    to ``|c_u C_u| + |c_v C_v|``.
    """
    defects = G.regularity_defects()
    if defects:
        raise GraphError(f"graph is not regular: (vertex, label, count) {defects[:5]}")
    if set(sol.alpha) != set(G.vertices) or set(sol.c) != set(G.vertices):
        raise GraphError("solution must assign alpha and c to every vertex")
    exact = routing.exact and _all_exact(sol)
    if tol is None:
        tol = 0 if exact else 1e-10
    beta = sol.beta
    res = {}

    for name in CONDITIONS:
        res[name] = (0, None)

    def record(name, value, witness):
        worst, wit = res[name]
        if wit is None or value > worst:
            res[name] = (value, witness)

    for v in G.vertices:
        record("surface", abs(char_poly_general(routing, (), beta, sol.alpha[v]) - 1), v)
        if sol.c[v] == 0:
            record("coefficients", math.inf, v)

    # distinctness: report the smallest max-coordinate gap as the "residual" to beat
    min_gap = math.inf
    gap_witness = None
    for u, v in combinations(G.vertices, 2):
        gap = max((abs(a - b) for a, b in zip(sol.alpha[u], sol.alpha[v])), default=0)
        if gap < min_gap:
            min_gap, gap_witness = gap, (u, v)

    for key, lab in G.edges.items():
        u, v = sorted(key)
        au, av = sol.alpha[u], sol.alpha[v]
        off = max((abs(a - b) for k, (a, b) in enumerate(zip(au, av)) if k != lab - 2), default=0)
        prod = conjugate_product(routing, beta, au, lab)
        record("conjugate", max(off, abs(au[lab - 2] * av[lab - 2] - prod)), (u, v, lab))
        if au[lab - 2] == av[lab - 2]:
            record("conjugate", math.inf, (u, v, lab))
        cu = C_general(routing, lab, beta, au)
        cv = C_general(routing, lab, beta, av)
        num = abs(sol.c[u] * cu + sol.c[v] * cv)
        scale = abs(sol.c[u] * cu) + abs(sol.c[v] * cv)
        record("coefficients", num / scale if scale else num, (u, v, lab))

    for v, labs in G.loops.items():
        for lab in labs:
            r = abs(char_poly_general(routing, (lab,), beta, sol.alpha[v]) - 1)
            record("loops", r, (v, lab))

    conds = {}
    for name in CONDITIONS:
        worst, wit = res[name]
        conds[name] = ConditionResult(worst <= tol, worst, wit)
    if len(G.vertices) > 1:
        ok = min_gap > 0 if exact else min_gap > tol
        conds["distinct"] = ConditionResult(ok, 0.0 if ok else math.inf, gap_witness)
    return VerificationReport(conds)


def _all_exact(sol: HarmonicSolution) -> bool:
    vals = [sol.beta, *sol.c.values()]
    for a in sol.alpha.values():
        vals.extend(a)
    return all(isinstance(x, (int, Fraction)) for x in vals)


def eval_hG(sol: HarmonicSolution, G: LabeledGraph, y: Sequence[int]):
    """``h_G(y) = sum_v c_v [(beta, alpha_v), y]``."""
    vals = [eval_term(LogLinearTerm(sol.c[v], sol.beta, tuple(sol.alpha[v])), y) for v in G.vertices]
    if all(isinstance(x, (int, Fraction)) for x in vals):
        return sum(vals, Fraction(0))
    return math.fsum(float(x) for x in vals)


def step_y_general(routing: JacksonRouting, y: Sequence[int], i: int, v: Sequence[int]) -> tuple:
    """Move of Y along ``v`` out of node ``i``; cancelled if queue ``i >= 2`` is empty."""
    if i >= 2 and y[i - 1] == 0:
        return tuple(y)
    return tuple(a + b for a, b in zip(y, v))


def harmonic_residual(routing: JacksonRouting, h: Callable, y: Sequence[int]):
    """``E_y[h(Y_1)] - h(y)`` under the Y-dynamics of ``routing``."""
    y = tuple(y)
    hy = h(y)
    vals = []
    for i, _j, pij, v in routing.jumps():
        vals.append(pij * h(step_y_general(routing, y, i, v)))
    vals.append(-hy)
    if all(isinstance(x, (int, Fraction)) for x in vals):
        return sum(vals, Fraction(0))
    return math.fsum(float(x) for x in vals)


def probe_states(d: int, y1_range=range(-3, 7), levels=range(4)) -> list:
    """All ``y`` with ``y(2..d)`` in ``levels`` and ``y(1)`` in ``y1_range``."""
    from itertools import product

    return [(y1,) + rest for rest in product(levels, repeat=d - 1) for y1 in y1_range]


def check_dB_determined_gate(sol: HarmonicSolution) -> bool:
    """Sufficient condition: ``|beta| < 1`` and every ``|alpha_v(i)| <= 1``."""
    if not abs(sol.beta) < 1:
        return False
    return all(abs(a) <= 1 for al in sol.alpha.values() for a in al)


def _close(a, b, exact: bool, tol: float = 1e-12) -> bool:
    return a == b if exact else abs(a - b) <= tol


def simple_extension_check(p1: JacksonRouting, p2: JacksonRouting):
    """Decide whether ``p2`` is a simple extension of ``p1``.

    Returns ``(ok, p_prime, scale)`` where ``p_prime`` folds jumps from the
    first ``d1`` nodes into nodes beyond ``d1`` onto node 0, and ``scale`` is
    its total mass.
    """
    d1, d2 = p1.d, p2.d
    if not d2 > d1 >= 1:
        raise ValueError(f"need d2 > d1 >= 1, got d1={d1}, d2={d2}")
    exact = p1.exact and p2.exact
    zero = Fraction(0) if exact else 0.0
    pp = [[zero] * (d1 + 1) for _ in range(d1 + 1)]
    for i in range(d1 + 1):
        for j in range(1, d1 + 1):
            pp[i][j] = p2.p[i][j]
    for i in range(1, d1 + 1):
        pp[i][0] = p2.p[i][0] + sum(p2.p[i][j] for j in range(d1 + 1, d2 + 1))
    scale = sum(x for r in pp for x in r)
    ok = scale != 0
    ok = ok and all(
        _close(pp[i][j], scale * p1.p[i][j], exact) for i in range(d1 + 1) for j in range(d1 + 1)
    )
    ok = ok and all(p2.p[i][j] == 0 for i in range(d1 + 1, d2 + 1) for j in range(1, d1 + 1))
    return ok, tuple(tuple(r) for r in pp), scale


def extend_graph(G: LabeledGraph, new_labels: Iterable[int]) -> LabeledGraph:
    """Add an ``l``-loop at every vertex for each label not already in ``G``."""
    L1 = frozenset(new_labels)
    if not G.labels <= L1:
        raise ValueError("extended label set must contain the original labels")
    extra = L1 - G.labels
    loops = {v: frozenset(G.loops.get(v, frozenset())) | extra for v in G.vertices}
    return LabeledGraph(L1, list(G.vertices), dict(G.edges), loops)


def extend_solution(
    sol: HarmonicSolution, p1: JacksonRouting, p2: JacksonRouting
) -> HarmonicSolution:
    """Lift a solution for ``p1`` to ``p2``; new alpha coordinates equal ``beta``."""
    ok, _pp, _s = simple_extension_check(p1, p2)
    if not ok:
        raise ValueError("p2 is not a simple extension of p1")
    pad = (sol.beta,) * (p2.d - p1.d)
    alpha = {v: tuple(a) + pad for v, a in sol.alpha.items()}
    return HarmonicSolution(sol.beta, alpha, dict(sol.c))
