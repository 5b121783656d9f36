"""Log-barrier Newton solver for the per-iteration convex surrogates.

Matrix variables are flattened to real coordinates (real parts, then
imaginary parts, row-major) and stacked with the named auxiliary scalars
into one vector ``z``.  Every constraint is a row ``g(z) <= 0`` of the form

    c + b.z + z^T A z + sum_i coef_i * z[u_i]^2 / z[t_i]

with ``A`` PSD and ``coef_i >= 0``, so each row is convex.  The objective has
the same shape and is minimized.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch
from .surrogate_bounds import QuadraticFunctional, as_column

FEAS_TOL = 1e-8
# warm starts closer than this to a row boundary go through phase I
INTERIOR_MARGIN = 1e-9
T_FLOOR = 1e-10
# Newton decrement target; the phi-decrease check below guards round-off
NEWTON_TOL = 1e-14


# ---------------------------------------------------------------------------
# variable packing


@dataclass(frozen=True)
class VarSpec:
    key: Hashable
    shape: tuple
    is_complex: bool = True

    @property
    def entries(self) -> int:
        return int(np.prod(self.shape))

    @property
    def width(self) -> int:
        return 2 * self.entries if self.is_complex else self.entries


class VariableSpace:
    """Real coordinate layout for a dict of matrix variables."""

    def __init__(self, specs: Sequence[VarSpec]):
        self.specs = list(specs)
        self.offsets = {}
        pos = 0
        for s in self.specs:
            self.offsets[s.key] = pos
            pos += s.width
        self.size = pos
        self._by_key = {s.key: s for s in self.specs}

    @classmethod
    def from_values(cls, values: Mapping) -> "VariableSpace":
        specs = []
        for key, v in values.items():
            v = as_column(np.asarray(v))
            specs.append(VarSpec(key, v.shape, bool(np.iscomplexobj(v))))
        return cls(specs)

    def spec(self, key) -> VarSpec:
        return self._by_key[key]

    def pack(self, values: Mapping) -> np.ndarray:
        x = np.zeros(self.size)
        for s in self.specs:
            v = as_column(np.asarray(values[s.key])).ravel()
            if v.size != s.entries:
                raise DimensionMismatch(f"variable {s.key!r} has {v.size} entries, expected {s.entries}")
            o = self.offsets[s.key]
            x[o:o + s.entries] = np.real(v)
            if s.is_complex:
                x[o + s.entries:o + 2 * s.entries] = np.imag(v)
        return x

    def unpack(self, x: np.ndarray) -> dict:
        out = {}
        for s in self.specs:
            o = self.offsets[s.key]
            re = x[o:o + s.entries]
            if s.is_complex:
                v = re + 1j * x[o + s.entries:o + 2 * s.entries]
            else:
                v = re.copy()
            out[s.key] = v.reshape(s.shape)
        return out

    def embed(self, qf: QuadraticFunctional, n: int | None = None):
        """Real ``(A, b, c)`` with ``qf(X) = c + b.x + x^T A x`` over an ``n``-vector."""
        n = self.size if n is None else n
        A = np.zeros((n, n))
        b = np.zeros(n)
        for key, C in qf.linear.items():
            s = self.spec(key)
            o = self.offsets[key]
            C = np.asarray(C).reshape(s.shape).ravel()
            b[o:o + s.entries] += 2.0 * np.real(C)
            if s.is_complex:
                b[o + s.entries:o + 2 * s.entries] += 2.0 * np.imag(C)
        for term in qf.quadratic:
            s = self.spec(term.key)
            o = self.offsets[term.key]
            M = term.sign * np.kron(term.left, term.right.T)
            e = s.entries
            if s.is_complex:
                A[o:o + e, o:o + e] += np.real(M)
                A[o:o + e, o + e:o + 2 * e] += -np.imag(M)
                A[o + e:o + 2 * e, o:o + e] += np.imag(M)
                A[o + e:o + 2 * e, o + e:o + 2 * e] += np.real(M)
            else:
                A[o:o + e, o:o + e] += np.real(M)
        return 0.5 * (A + A.T), b, float(qf.constant)


# ---------------------------------------------------------------------------
# expressions over matrices and named scalars


@dataclass
class Expr:
    """``qf(X) + sum lin[s]*s + sum sq[s]*s^2 + sum coef*u^2/t``."""

    qf: QuadraticFunctional = field(default_factory=QuadraticFunctional)
    lin: dict = field(default_factory=dict)
    sq: dict = field(default_factory=dict)
    ratios: list = field(default_factory=list)

    @classmethod
    def const(cls, value: float) -> "Expr":
        return cls(QuadraticFunctional(float(value)))

    @classmethod
    def scalar(cls, name: str, coef: float = 1.0) -> "Expr":
        return cls(lin={name: float(coef)})

    def scaled(self, s: float) -> "Expr":
        s = float(s)
        return Expr(
            self.qf.scaled(s),
            {k: s * v for k, v in self.lin.items()},
            {k: s * v for k, v in self.sq.items()},
            [(s * c, u, t) for c, u, t in self.ratios],
        )

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return Expr(self.qf + float(other), dict(self.lin), dict(self.sq), list(self.ratios))
        if isinstance(other, QuadraticFunctional):
            other = Expr(other)
        lin = dict(self.lin)
        for k, v in other.lin.items():
            lin[k] = lin.get(k, 0.0) + v
        sq = dict(self.sq)
        for k, v in other.sq.items():
            sq[k] = sq.get(k, 0.0) + v
        return Expr(self.qf + other.qf, lin, sq, self.ratios + other.ratios)

    __radd__ = __add__

    def __neg__(self):
        return self.scaled(-1.0)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-float(other))
        if isinstance(other, QuadraticFunctional):
            other = Expr(other)
        return self + other.scaled(-1.0)

    def __mul__(self, s):
        return self.scaled(s)

    __rmul__ = __mul__

    def evaluate(self, variables: Mapping, scalars: Mapping) -> float:
        val = self.qf(variables) if (self.qf.linear or self.qf.quadratic) else float(self.qf.constant)
        for k, v in self.lin.items():
            val += v * scalars[k]
        for k, v in self.sq.items():
            val += v * scalars[k] ** 2
        for c, u, t in self.ratios:
            val += c * scalars[u] ** 2 / scalars[t]
        return float(val)


# ---------------------------------------------------------------------------
# canonical rows


@dataclass
class Row:
    name: str
    A: np.ndarray
    b: np.ndarray
    c: float
    ratios: tuple = ()

    def value(self, z: np.ndarray) -> float:
        v = self.c + self.b @ z + z @ (self.A @ z)
        for coef, iu, it in self.ratios:
            v += coef * z[iu] ** 2 / z[it]
        return float(v)

    def grad(self, z: np.ndarray) -> np.ndarray:
        g = self.b + 2.0 * (self.A @ z)
        for coef, iu, it in self.ratios:
            u, t = z[iu], z[it]
            g[iu] += 2.0 * coef * u / t
            g[it] -= coef * u * u / (t * t)
        return g

    def hess(self, z: np.ndarray) -> np.ndarray:
        H = 2.0 * self.A.copy()
        for coef, iu, it in self.ratios:
            u, t = z[iu], z[it]
            H[iu, iu] += 2.0 * coef / t
            H[iu, it] -= 2.0 * coef * u / t**2
            H[it, iu] -= 2.0 * coef * u / t**2
            H[it, it] += 2.0 * coef * u * u / t**3
        return H

    def in_domain(self, z: np.ndarray) -> bool:
        return all(z[it] > 0 for _, _, it in self.ratios)

    def is_convex(self, tol: float = 1e-9) -> bool:
        if any(c < 0 for c, _, _ in self.ratios):
            return False
        if not np.any(self.A):
            return True
        ev = np.linalg.eigvalsh(self.A)
        return bool(ev.min() >= -tol * max(1.0, np.abs(ev).max()))


@dataclass
class ConvexSubproblem:
    """Minimize ``objective(z)`` subject to ``row(z) <= 0`` for every row."""

    space: VariableSpace
    scalar_names: list
    objective: Row
    rows: list
    warm: np.ndarray
    maximize: bool = False

    @property
    def n(self) -> int:
        return self.space.size + len(self.scalar_names)

    def split(self, z: np.ndarray):
        x = z[: self.space.size]
        scalars = {name: float(z[self.space.size + i]) for i, name in enumerate(self.scalar_names)}
        return self.space.unpack(x), scalars

    def objective_value(self, z: np.ndarray) -> float:
        """Objective in the original sense (negated back for max problems)."""
        v = self.objective.value(z)
        return -v if self.maximize else v

    def row_names(self) -> list:
        return [r.name for r in self.rows]

    def has_scalar(self, prefix: str) -> bool:
        return any(name.startswith(prefix) for name in self.scalar_names)


class SubproblemBuilder:
    """Collects scalar variables, rows and an objective, then canonicalizes."""

    def __init__(self, space: VariableSpace):
        self.space = space
        self.scalars: list = []
        self.scalar_warm: dict = {}
        self._rows: list = []
        self._objective: Expr | None = None
        self._maximize = False

    def add_scalar(self, name: str, warm: float) -> Expr:
        if name in self.scalar_warm:
            raise ValueError(f"duplicate scalar {name}")
        self.scalars.append(name)
        self.scalar_warm[name] = float(warm)
        return Expr.scalar(name)

    def le(self, name: str, expr: Expr):
        """Add the convex row ``expr <= 0``."""
        self._rows.append((name, expr))

    def ge(self, name: str, expr: Expr):
        """Add ``expr >= 0`` (``expr`` concave)."""
        self._rows.append((name, -expr))

    def minimize(self, expr: Expr):
        self._objective, self._maximize = expr, False

    def maximize(self, expr: Expr):
        self._objective, self._maximize = expr, True

    def _canon(self, name: str, expr: Expr) -> Row:
        n_x = self.space.size
        n = n_x + len(self.scalars)
        idx = {s: n_x + i for i, s in enumerate(self.scalars)}
        A, b, c = self.space.embed(expr.qf, n)
        for s, v in expr.lin.items():
            b[idx[s]] += v
        for s, v in expr.sq.items():
            A[idx[s], idx[s]] += v
        ratios = tuple((float(cf), idx[u], idx[t]) for cf, u, t in expr.ratios if cf != 0)
        return Row(name, A, b, c, ratios)

    def build(self, warm_variables: Mapping) -> ConvexSubproblem:
        if self._objective is None:
            raise ValueError("objective not set")
        obj = self._objective.scaled(-1.0) if self._maximize else self._objective
        rows = [self._canon(n, e) for n, e in self._rows]
        z0 = np.concatenate([self.space.pack(warm_variables),
                             np.array([self.scalar_warm[s] for s in self.scalars])])
        return ConvexSubproblem(self.space, list(self.scalars), self._canon("objective", obj),
                                rows, z0, self._maximize)


# ---------------------------------------------------------------------------
# solver


@dataclass
class SubSolution:
    z: np.ndarray
    variables: dict
    scalars: dict
    objective: float
    feasibility: float
    stationarity: float
    status: str
    newton_steps: int = 0
    reason: str = ""


@dataclass
class FeasibilityReport:
    violations: dict
    max_violation: float

    @property
    def feasible(self) -> bool:
        return self.max_violation <= FEAS_TOL


def check_feasibility(sub: ConvexSubproblem, z) -> FeasibilityReport:
    """Signed violation ``max(row(z), 0)`` per row (``inf`` outside a ratio domain)."""
    z = np.asarray(z, dtype=float)
    if z.shape != (sub.n,):
        raise DimensionMismatch(f"point has shape {z.shape}, subproblem expects ({sub.n},)")
    viol = {}
    for r in sub.rows:
        viol[r.name] = max(r.value(z), 0.0) if r.in_domain(z) else math.inf
    return FeasibilityReport(viol, max(viol.values(), default=0.0))


class _Barrier:
    """Log barrier over stacked rows, evaluated in one pass per point."""

    def __init__(self, f0: Row, rows: list, scale: float = 1.0):
        self.f0, self.rows, self.scale = f0, rows, scale
        n = len(f0.b)
        m = len(rows)
        self.A = np.array([r.A for r in rows]).reshape(m, n, n)
        self.B = np.array([r.b for r in rows]).reshape(m, n)
        self.C = np.array([r.c for r in rows], dtype=float)
        ratios = [(i, c, iu, it) for i, r in enumerate(rows) for c, iu, it in r.ratios]
        self.r_row = np.array([x[0] for x in ratios], dtype=int)
        self.r_coef = np.array([x[1] for x in ratios], dtype=float)
        self.r_u = np.array([x[2] for x in ratios], dtype=int)
        self.r_t = np.array([x[3] for x in ratios], dtype=int)

    def values(self, z):
        Az = self.A @ z
        v = self.C + self.B @ z + Az @ z
        if self.r_row.size:
            np.add.at(v, self.r_row, self.r_coef * z[self.r_u] ** 2 / z[self.r_t])
        return v, Az

    def in_domain(self, z) -> bool:
        return bool(np.all(z[self.r_t] > 0)) and self.f0.in_domain(z)

    def min_slack(self, z) -> float:
        """Smallest ``-row(z)`` with each row scaled by ``1 + |c| + ||b||``."""
        if not len(self.rows):
            return math.inf
        v, _ = self.values(z)
        size = 1.0 + np.abs(self.C) + np.linalg.norm(self.B, axis=1)
        return float(np.min(-v / size))

    def strictly_feasible(self, z) -> bool:
        return self.in_domain(z) and bool(np.all(self.values(z)[0] < 0))

    def phi(self, z, mu) -> float:
        v, _ = self.values(z)
        return self.scale * self.f0.value(z) - mu * float(np.sum(np.log(-v)))

    def try_point(self, z, mu):
        """Barrier value at ``z``, or ``None`` outside the strict interior."""
        if not self.in_domain(z):
            return None
        v, _ = self.values(z)
        if not np.all(v < 0):
            return None
        return self.scale * self.f0.value(z) - mu * float(np.sum(np.log(-v)))

    def max_step(self, z, dz) -> float:
        """Largest step keeping quadratic rows and ratio domains strictly interior."""
        v, Az = self.values(z)
        lin = self.B @ dz + 2.0 * (Az @ dz)
        quad = (self.A @ dz) @ dz
        plain = np.ones(len(v), dtype=bool)
        plain[self.r_row] = False
        smax = math.inf
        for a, b, c in zip(quad[plain], lin[plain], v[plain]):
            # first positive root of c + b s + a s^2 = 0, with c < 0
            if abs(a) <= 1e-300:
                if b > 0:
                    smax = min(smax, -c / b)
                continue
            disc = b * b - 4.0 * a * c
            if disc < 0:
                continue
            r = math.sqrt(disc)
            roots = [x for x in ((-b - r) / (2 * a), (-b + r) / (2 * a)) if x > 0]
            if roots:
                smax = min(smax, min(roots))
        dt = dz[self.r_t]
        neg = dt < 0
        if np.any(neg):
            smax = min(smax, float(np.min(-z[self.r_t][neg] / dt[neg])))
        return smax

    def derivs(self, z, mu):
        g = self.scale * self.f0.grad(z)
        H = self.scale * self.f0.hess(z)
        v, Az = self.values(z)
        G = self.B + 2.0 * Az
        w = 1.0 / (-v)
        Hsum = 2.0 * np.tensordot(w, self.A, axes=1)
        for i, c, iu, it in zip(self.r_row, self.r_coef, self.r_u, self.r_t):
            u, t = z[iu], z[it]
            G[i, iu] += 2.0 * c * u / t
            G[i, it] -= c * u * u / (t * t)
            wi = w[i] * c
            Hsum[iu, iu] += 2.0 * wi / t
            Hsum[iu, it] -= 2.0 * wi * u / t**2
            Hsum[it, iu] -= 2.0 * wi * u / t**2
            Hsum[it, it] += 2.0 * wi * u * u / t**3
        g = g + mu * (G.T @ w)
        H = H + mu * (Hsum + (G.T * w**2) @ G)
        return g, H


def _newton_center(bar: _Barrier, z, mu, max_inner, stop=None):
    steps = 0
    dec = math.inf
    for _ in range(max_inner):
        g, H = bar.derivs(z, mu)
        ridge = 1e-12 * max(1.0, float(np.abs(np.diag(H)).max()))
        try:
            dz = -np.linalg.solve(H + ridge * np.eye(len(z)), g)
        except np.linalg.LinAlgError:
            dz = -np.linalg.lstsq(H, g, rcond=None)[0]
        dec = float(-g @ dz)
        if not np.isfinite(dec) or dec < 0:
            dz = -g
            dec = float(g @ g)
        if dec / 2.0 <= NEWTON_TOL:
            break
        phi0 = bar.phi(z, mu)
        s = min(1.0, 0.99 * bar.max_step(z, dz))
        accepted = False
        for _ in range(60):
            zn = z + s * dz
            pn = bar.try_point(zn, mu)
            if pn is not None and pn <= phi0 - 0.25 * s * dec:
                accepted = True
                break
            s *= 0.5
        steps += 1
        if not accepted:
            break
        z = zn
        if phi0 - pn <= 1e-15 * max(1.0, abs(phi0)):
            break
        if stop is not None and stop(z):
            break
    return z, dec, steps


def _barrier_solve(bar: _Barrier, z, tol_gap, max_outer, max_inner, stop=None):
    m = max(len(bar.rows), 1)
    mu = 1.0
    steps = 0
    status = "max_iters"
    dec = math.inf
    for _ in range(max_outer):
        z, dec, k = _newton_center(bar, z, mu, max_inner, stop)
        steps += k
        if stop is not None and stop(z):
            status = "converged"
            break
        if m * mu <= tol_gap:
            status = "converged"
            break
        mu *= 0.1
    return z, status, steps, m * mu + dec / 2.0


def _phase_one(sub: ConvexSubproblem, z0, max_outer, max_inner):
    """Find a strictly feasible point by minimizing the max normalized row value."""
    n = sub.n
    norms = [1.0 + float(np.linalg.norm(r.grad(z0))) if r.in_domain(z0) else 1.0 for r in sub.rows]
    rows = []
    for r, nu in zip(sub.rows, norms):
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = r.A / nu
        b = np.append(r.b / nu, -1.0)
        rows.append(Row(r.name, A, b, r.c / nu, tuple((c / nu, iu, it) for c, iu, it in r.ratios)))
    rows.append(Row("phase1_floor", np.zeros((n + 1, n + 1)), np.append(np.zeros(n), -1.0), -1.0))
    # keep the search local so the phase-one barrier stays bounded
    R2 = (1.0 + float(np.abs(z0).max(initial=0.0))) ** 2
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = np.eye(n) / R2
    rows.append(Row("phase1_region", A, np.append(-2.0 * z0 / R2, 0.0), float(z0 @ z0) / R2 - 1.0))
    f0 = Row("phase1", np.zeros((n + 1, n + 1)), np.append(np.zeros(n), 1.0), 0.0)
    s0 = max(r.value(np.append(z0, 0.0)) for r in rows[:-2])
    s0 = max(s0, 0.0) + 1e-3
    w = np.append(z0, s0)
    bar = _Barrier(f0, rows)
    if not bar.strictly_feasible(w):
        return None, 0

    def done(wz):
        return wz[-1] < -1e-4

    w, _, steps, _ = _barrier_solve(bar, w, 1e-8, max_outer, max_inner, stop=done)
    z = w[:n]
    main = _Barrier(sub.objective, sub.rows)
    return (z if main.strictly_feasible(z) else None), steps


def solve(
    sub: ConvexSubproblem,
    warm=None,
    *,
    tol_gap: float = 1e-7,
    max_outer: int = 50,
    max_inner: int = 100,
    dump_path=None,
) -> SubSolution:
    """Solve a convex subproblem from a (possibly boundary) feasible warm start.

    Never raises on numerical trouble: if no strictly feasible point can be
    found, or the barrier iterate is worse than the warm start, the warm start
    is returned with status ``fallback_warm_start``.
    """
    if dump_path is not None:
        dump_subproblem(sub, dump_path)
    z_warm = np.array(sub.warm if warm is None else warm, dtype=float)
    warm_report = check_feasibility(sub, z_warm)
    warm_obj = sub.objective.value(z_warm) if sub.objective.in_domain(z_warm) else math.inf

    def fallback(steps=0, reason="numerical"):
        variables, scalars = sub.split(z_warm)
        return SubSolution(z_warm, variables, scalars, sub.objective_value(z_warm),
                           warm_report.max_violation, math.inf, "fallback_warm_start", steps, reason)

    try:
        bar0 = _Barrier(sub.objective, sub.rows)
        steps = 0
        z = z_warm
        if not bar0.strictly_feasible(z) or bar0.min_slack(z) < INTERIOR_MARGIN:
            z, steps = _phase_one(sub, z_warm, max_outer, max_inner)
            if z is None:
                return fallback(steps)
        scale = 1.0 / max(1.0, abs(warm_obj) if np.isfinite(warm_obj) else 1.0)
        bar = _Barrier(sub.objective, sub.rows, scale)
        z, status, k, stat = _barrier_solve(bar, z, tol_gap, max_outer, max_inner)
        steps += k
    except (FloatingPointError, ValueError, np.linalg.LinAlgError, OverflowError):
        return fallback()
    obj = sub.objective.value(z)
    if not np.isfinite(obj):
        return fallback(steps)
    if obj > warm_obj + 1e-12 * max(1.0, abs(warm_obj)):
        return fallback(steps, "no_improvement")
    report = check_feasibility(sub, z)
    if report.max_violation > FEAS_TOL:
        return fallback(steps)
    variables, scalars = sub.split(z)
    return SubSolution(z, variables, scalars, sub.objective_value(z), report.max_violation,
                       stat, status, steps)


def dump_subproblem(sub: ConvexSubproblem, path) -> None:
    """Write dimensions, kernels and rows as JSON for offline inspection."""

    def row_dict(r: Row):
        return {"name": r.name, "A": r.A.tolist(), "b": r.b.tolist(), "c": r.c,
                "ratios": [list(x) for x in r.ratios]}

    payload = {
        "variables": [{"key": str(s.key), "shape": list(s.shape), "complex": s.is_complex}
                      for s in sub.space.specs],
        "scalars": list(sub.scalar_names),
        "maximize": sub.maximize,
        "objective": row_dict(sub.objective),
        "rows": [row_dict(r) for r in sub.rows],
        "warm": sub.warm.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
