"""Generic fractional-programming engine driven by majorization-minimization.

A problem is a list of *pieces*; each piece is a weighted sum of fractional
terms ``f/g`` and plain terms.  Pieces are aggregated by a sum, by the
worst piece (max for minimization, min for maximization) through an
epigraph scalar, or by their geometric mean (linearized each iteration).

Each fractional term is replaced by an auxiliary-variable surrogate:

* upper bound (minimization side): ``u^2 / t`` with ``g~(X) >= t > 0`` and
  ``2 sqrt(f0) u - f0 >= f~(X)``, where ``f~`` majorizes ``f`` and ``g~``
  minorizes ``g``;
* lower bound (maximization side): ``2 a t - a^2 g~(X)`` with
  ``f~(X) >= t^2`` and ``a = sqrt(f0) / g0``, where ``f~`` minorizes ``f``
  and ``g~`` majorizes ``g``.

Which side a term uses follows from the problem direction and the sign of
its weight, so mixed objectives and constraints need no special casing.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .convex_subsolver import (
    T_FLOOR,
    ConvexSubproblem,
    Expr,
    SubproblemBuilder,
    SubSolution,
    VariableSpace,
    check_feasibility,
    solve,
)
from .errors import (
    InfeasibleExpansion,
    InfeasibleInit,
    NonPositiveDenominator,
    NonPositiveTermValue,
)
from .surrogate_bounds import QuadraticFunctional, gm_upper_bound, prod_square_lb

Vars = Mapping
Builder = Callable[[Vars], QuadraticFunctional]

AGGREGATIONS = ("sum", "extreme", "product")


@dataclass
class FractionalTerm:
    """One ratio ``weight * f / g`` with direction-specific bound builders."""

    numerator: Callable[[Vars], float]
    denominator: Callable[[Vars], float]
    f_upper: Builder | None = None
    f_lower: Builder | None = None
    g_upper: Builder | None = None
    g_lower: Builder | None = None
    weight: float = 1.0
    ratio_bound: Builder | None = None
    name: str = ""

    def value(self, X: Vars) -> float:
        g = self.denominator(X)
        if g <= 0:
            raise NonPositiveDenominator(f"term {self.name!r} has denominator {g:.3e}")
        return self.numerator(X) / g


@dataclass
class PlainTerm:
    """A non-fractional term ``weight * h(X)`` with its own bounds."""

    value_fn: Callable[[Vars], float]
    lower: Builder | None = None
    upper: Builder | None = None
    weight: float = 1.0
    name: str = ""

    def value(self, X: Vars) -> float:
        return self.value_fn(X)


@dataclass
class ConstraintGroup:
    """``sum_m w_m h_m(X) <= bound`` (``sense="le"``) or ``>= bound`` (``"ge"``)."""

    terms: list
    bound: float
    sense: str = "le"
    name: str = "group"

    def __post_init__(self):
        if self.sense not in ("le", "ge"):
            raise ValueError("sense must be 'le' or 'ge'")
        if self.sense == "le" and not self.bound > 0:
            raise ValueError("upper-bounded groups need a positive bound")

    def value(self, X: Vars) -> float:
        return sum(t.weight * t.value(X) for t in self.terms)

    def violation(self, X: Vars) -> float:
        v = self.value(X)
        return max(v - self.bound, 0.0) if self.sense == "le" else max(self.bound - v, 0.0)


@dataclass
class PlainConstraint:
    """``h(X) >= floor`` enforced through a concave minorant of ``h``."""

    value_fn: Callable[[Vars], float]
    lower: Builder
    floor: float
    name: str = "floor"

    def violation(self, X: Vars) -> float:
        return max(self.floor - self.value_fn(X), 0.0)


@dataclass
class FeasibleSet:
    """Convex set the variables live in.

    ``ball_keys``/``radius``: ``sum ||X_key||_F^2 <= radius``.
    ``modulus_keys``: every entry satisfies ``|x_i|^2 <= 1``.
    ``box``: per-key real bounds ``(lo, hi)``.
    ``extra_rows``: builder returning ``[(name, qf)]`` rows ``qf(X) >= 0``,
    rebuilt at every expansion point (used for linearized non-convex sets).
    """

    ball_keys: tuple = ()
    radius: float = math.inf
    modulus_keys: tuple = ()
    box: dict = field(default_factory=dict)
    extra_rows: Callable[[Vars], list] | None = None

    def violation(self, X: Vars) -> float:
        worst = 0.0
        if self.ball_keys:
            total = sum(float(np.vdot(X[k], X[k]).real) for k in self.ball_keys)
            worst = max(worst, total - self.radius)
        for k in self.modulus_keys:
            worst = max(worst, float(np.max(np.abs(X[k]) ** 2)) - 1.0)
        for k, (lo, hi) in self.box.items():
            x = np.real(np.asarray(X[k]))
            worst = max(worst, float(np.max(lo - x)), float(np.max(x - hi)))
        return max(worst, 0.0)


@dataclass
class FmpProblem:
    direction: str
    pieces: list
    space: VariableSpace
    feasible: FeasibleSet = field(default_factory=FeasibleSet)
    aggregation: str = "sum"
    constraints: list = field(default_factory=list)
    plain_constraints: list = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        if self.direction not in ("min", "max"):
            raise ValueError("direction must be 'min' or 'max'")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if not self.pieces or not any(self.pieces):
            raise ValueError("problem needs at least one objective term")

    @property
    def maximize(self) -> bool:
        return self.direction == "max"

    def piece_values(self, X: Vars) -> np.ndarray:
        return np.array([sum(t.weight * t.value(X) for t in piece) for piece in self.pieces])

    def objective(self, X: Vars) -> float:
        vals = self.piece_values(X)
        if self.aggregation == "sum":
            return float(vals.sum())
        if self.aggregation == "extreme":
            return float(vals.min() if self.maximize else vals.max())
        if np.any(vals <= 0):
            return 0.0 if self.maximize else math.inf
        return float(np.exp(np.mean(np.log(vals))))

    def violation(self, X: Vars) -> float:
        worst = self.feasible.violation(X)
        for c in self.constraints:
            worst = max(worst, c.violation(X))
        for c in self.plain_constraints:
            worst = max(worst, c.violation(X))
        return worst

    def better(self, new: float, old: float) -> bool:
        """Not worse in the problem direction."""
        return new >= old if self.maximize else new <= old


# ---------------------------------------------------------------------------
# product linearization


def linearize_product(values: Sequence[float], direction: str) -> np.ndarray:
    """Per-piece weights turning a product objective into a weighted sum.

    Minimization majorizes the geometric mean by its tangent plane;
    maximization minorizes ``prod x_k^2`` by its tangent plane.  Both give an
    MM step for the product objective.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 1:
        return np.ones(1)
    if direction == "min":
        if np.any(values <= 0):
            raise NonPositiveTermValue("geometric-mean linearization needs positive terms")
        return gm_upper_bound(values).slopes
    if np.any(values < 0):
        raise NonPositiveTermValue("product linearization needs nonnegative terms")
    return prod_square_lb(values).slopes


# ---------------------------------------------------------------------------
# surrogate assembly


def _const_qf(value: float) -> QuadraticFunctional:
    return QuadraticFunctional(float(value))


class _Assembler:
    def __init__(self, problem: FmpProblem, X: Vars):
        self.problem = problem
        self.X = X
        self.b = SubproblemBuilder(problem.space)
        self._count = 0

    def _fresh(self, prefix: str) -> str:
        self._count += 1
        return f"{prefix}{self._count}"

    def upper(self, term, tag: str) -> Expr:
        if isinstance(term, PlainTerm):
            return Expr(term.upper(self.X))
        f0 = term.numerator(self.X)
        g0 = term.denominator(self.X)
        if g0 <= 0 or f0 < 0:
            raise InfeasibleExpansion(f"term {term.name!r}: f={f0:.3e}, g={g0:.3e}")
        u = self.b.add_scalar(self._fresh(f"u_{tag}_"), math.sqrt(f0))
        t = self.b.add_scalar(self._fresh(f"t_{tag}_"), g0)
        un, tn = next(iter(u.lin)), next(iter(t.lin))
        f_ub = Expr(term.f_upper(self.X))
        g_lb = Expr(term.g_lower(self.X))
        self.b.ge(f"den_{tn}", g_lb - t)
        self.b.ge(f"num_{un}", u.scaled(2.0 * math.sqrt(f0)) - f0 - f_ub)
        self.b.ge(f"pos_{tn}", t - T_FLOOR)
        self.b.ge(f"pos_{un}", u)
        return Expr(ratios=[(1.0, un, tn)])

    def lower(self, term, tag: str) -> Expr:
        if isinstance(term, PlainTerm):
            return Expr(term.lower(self.X))
        if term.ratio_bound is not None:
            return Expr(term.ratio_bound(self.X))
        f0 = term.numerator(self.X)
        g0 = term.denominator(self.X)
        if g0 <= 0 or f0 < 0:
            raise InfeasibleExpansion(f"term {term.name!r}: f={f0:.3e}, g={g0:.3e}")
        a = math.sqrt(f0) / g0
        t = self.b.add_scalar(self._fresh(f"t_{tag}_"), math.sqrt(f0))
        tn = next(iter(t.lin))
        f_lb = Expr(term.f_lower(self.X))
        g_ub = Expr(term.g_upper(self.X))
        self.b.ge(f"num_{tn}", f_lb - Expr(sq={tn: 1.0}))
        self.b.ge(f"pos_{tn}", t)
        return t.scaled(2.0 * a) - g_ub.scaled(a * a)

    def weighted_sum(self, terms, want_upper: bool, tag: str) -> Expr:
        total = Expr()
        for term in terms:
            w = float(term.weight)
            if w == 0:
                continue
            use_upper = want_upper if w > 0 else not want_upper
            bound = self.upper(term, tag) if use_upper else self.lower(term, tag)
            total = total + bound.scaled(w)
        return total

    def feasible_rows(self):
        fs = self.problem.feasible
        if fs.ball_keys:
            qf = QuadraticFunctional(-float(fs.radius))
            for k in fs.ball_keys:
                s = self.problem.space.spec(k)
                qf.add_quadratic(k, np.eye(s.shape[0]), np.eye(s.shape[1]))
            self.b.le("ball", Expr(qf))
        for k in fs.modulus_keys:
            s = self.problem.space.spec(k)
            for i in range(s.shape[0]):
                sel = np.zeros((s.shape[0], s.shape[0]))
                sel[i, i] = 1.0
                qf = QuadraticFunctional(-1.0)
                qf.add_quadratic(k, sel, np.eye(s.shape[1]))
                self.b.le(f"modulus_{k}_{i}", Expr(qf))
        for k, (lo, hi) in fs.box.items():
            s = self.problem.space.spec(k)
            for idx in np.ndindex(*s.shape):
                e = np.zeros(s.shape)
                e[idx] = 0.5
                lo_qf = QuadraticFunctional(-float(lo))
                lo_qf.add_linear(k, e)
                hi_qf = QuadraticFunctional(float(hi))
                hi_qf.add_linear(k, -e)
                self.b.ge(f"box_lo_{k}_{idx}", Expr(lo_qf))
                self.b.ge(f"box_hi_{k}_{idx}", Expr(hi_qf))
        if fs.extra_rows is not None:
            for name, qf in fs.extra_rows(self.X):
                self.b.ge(name, Expr(qf))

    def build(self) -> ConvexSubproblem:
        p = self.problem
        want_upper = not p.maximize
        exprs = [self.weighted_sum(piece, want_upper, f"o{i}") for i, piece in enumerate(p.pieces)]
        if p.aggregation == "sum":
            obj = sum(exprs, Expr())
        elif p.aggregation == "product":
            weights = linearize_product(p.piece_values(self.X), p.direction)
            obj = sum((e.scaled(w) for e, w in zip(exprs, weights)), Expr())
        else:
            s = self.b.add_scalar("s_epigraph", p.objective(self.X))
            for i, e in enumerate(exprs):
                if p.maximize:
                    self.b.ge(f"epigraph_{i}", e - s)
                else:
                    self.b.le(f"epigraph_{i}", e - s)
            obj = s
        if p.maximize:
            self.b.maximize(obj)
        else:
            self.b.minimize(obj)
        for i, c in enumerate(p.constraints):
            if c.sense == "le":
                self.b.le(f"{c.name}_{i}", self.weighted_sum(c.terms, True, f"c{i}") - c.bound)
            else:
                self.b.ge(f"{c.name}_{i}", self.weighted_sum(c.terms, False, f"c{i}") - c.bound)
        for i, c in enumerate(p.plain_constraints):
            self.b.ge(f"{c.name}_{i}", Expr(c.lower(self.X)) - c.floor)
        self.feasible_rows()
        return self.b.build(self.X)


def _warm_check(sub: ConvexSubproblem):
    z = sub.warm
    for r in sub.rows:
        v = r.value(z) if r.in_domain(z) else math.inf
        scale = 1.0 + abs(r.c) + abs(float(r.b @ z)) + abs(float(z @ (r.A @ z)))
        if v > 1e-8 * scale:
            raise InfeasibleExpansion(f"warm start violates row {r.name!r} by {v:.3e}")


def build_surrogate(problem: FmpProblem, X: Vars) -> ConvexSubproblem:
    """Assemble the convex surrogate at expansion point ``X`` (warm start included)."""
    sub = _Assembler(problem, X).build()
    _warm_check(sub)
    return sub


def build_min_surrogate(problem: FmpProblem, X: Vars) -> ConvexSubproblem:
    if problem.maximize:
        raise ValueError("expected a minimization problem")
    return build_surrogate(problem, X)


def build_max_surrogate(problem: FmpProblem, X: Vars) -> ConvexSubproblem:
    if not problem.maximize:
        raise ValueError("expected a maximization problem")
    return build_surrogate(problem, X)


# ---------------------------------------------------------------------------
# MM loop


@dataclass
class MmTrace:
    objectives: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    feasibility: list = field(default_factory=list)
    stationarity: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    accepted: list = field(default_factory=list)

    @property
    def updates(self) -> int:
        """Number of subproblem solves (variable updates attempted)."""
        return len(self.statuses)

    def is_monotone(self, maximize: bool, slack: float = 1e-9) -> bool:
        obj = np.asarray(self.objectives)
        if obj.size < 2:
            return True
        d = np.diff(obj)
        scale = np.maximum(1.0, np.abs(obj[:-1]))
        return bool(np.all(d >= -slack * scale) if maximize else np.all(d <= slack * scale))

    def as_records(self) -> list:
        out = [{"iteration": 0, "objective": self.objectives[0]}]
        for i in range(self.updates):
            out.append({
                "iteration": i + 1,
                "objective": self.objectives[i + 1],
                "status": self.statuses[i],
                "accepted": self.accepted[i],
                "feasibility": self.feasibility[i],
                "stationarity": self.stationarity[i],
                "wall_time": self.wall_time[i],
            })
        return out


@dataclass
class MmResult:
    variables: dict
    objective: float
    iterations: int
    converged: bool


def relative_change(new: float, old: float) -> float:
    if new == old:
        return 0.0
    return abs(new - old) / max(abs(old), 1e-12)


def mm_step(problem: FmpProblem, X: Vars, solver=solve) -> tuple:
    """One surrogate solve from ``X``; returns ``(candidate, SubSolution)``."""
    sub = build_surrogate(problem, X)
    sol = solver(sub)
    return sol.variables, sol


def run_mm(
    problem: FmpProblem,
    init: Vars,
    *,
    solver=solve,
    delta: float = 1e-4,
    max_iter: int = 200,
    stop_when: Callable[[Vars], bool] | None = None,
    feas_tol: float = 1e-8,
) -> tuple:
    """Iterate surrogate solves until the true objective stalls.

    A candidate is accepted only if it is feasible for the true problem and
    does not worsen the true objective; otherwise the previous point is kept.
    Three consecutive numerical subsolver failures end the loop.  A rejected
    candidate from an otherwise healthy solve also ends it, since rebuilding
    the surrogate at the same point reproduces the same subproblem.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    X = {k: np.array(v) for k, v in init.items()}
    tol = feas_tol * max(1.0, problem.feasible.radius if np.isfinite(problem.feasible.radius) else 1.0)
    if problem.violation(X) > tol:
        raise InfeasibleInit(f"initial point violates constraints by {problem.violation(X):.3e}")
    obj = problem.objective(X)
    trace = MmTrace(objectives=[obj])
    failures = 0
    converged = False
    for _ in range(max_iter):
        t0 = time.perf_counter()
        try:
            cand, sol = mm_step(problem, X, solver)
        except InfeasibleExpansion:
            trace.statuses.append("infeasible_expansion")
            trace.accepted.append(False)
            trace.feasibility.append(math.inf)
            trace.stationarity.append(math.inf)
            trace.wall_time.append(time.perf_counter() - t0)
            trace.objectives.append(obj)
            break
        new_obj = None
        ok = False
        if sol.status != "fallback_warm_start":
            try:
                viol = problem.violation(cand)
                new_obj = problem.objective(cand)
                ok = viol <= tol and np.isfinite(new_obj) and problem.better(new_obj, obj)
            except (ValueError, ArithmeticError):
                ok = False
        trace.statuses.append(sol.status)
        trace.accepted.append(bool(ok))
        trace.feasibility.append(float(sol.feasibility))
        trace.stationarity.append(float(sol.stationarity))
        trace.wall_time.append(time.perf_counter() - t0)
        if ok:
            change = relative_change(new_obj, obj)
            X, obj = cand, new_obj
            trace.objectives.append(obj)
            failures = 0
            if stop_when is not None and stop_when(X):
                converged = True
                break
            if change < delta:
                converged = True
                break
        else:
            trace.objectives.append(obj)
            if sol.status == "fallback_warm_start" and sol.reason != "no_improvement":
                failures += 1
                if failures >= 3:
                    break
            else:
                converged = True
                break
    return MmResult(X, obj, trace.updates, converged), trace
