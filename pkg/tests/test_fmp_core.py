import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmpkit.convex_subsolver import VariableSpace, VarSpec, solve
from fmpkit.errors import InfeasibleExpansion, InfeasibleInit, NonPositiveTermValue
from fmpkit.fmp_core import (
    ConstraintGroup,
    FeasibleSet,
    FmpProblem,
    FractionalTerm,
    MmTrace,
    PlainTerm,
    build_max_surrogate,
    build_min_surrogate,
    build_surrogate,
    linearize_product,
    mm_step,
    relative_change,
    run_mm,
)
from fmpkit.surrogate_bounds import QuadraticFunctional


def space(n=1):
    return VariableSpace([VarSpec("x", (n, 1), False)])


def x_of(X, i=0):
    return float(np.real(np.ravel(X["x"])[i]))


def affine(const, coefs):
    """``const + sum_i coefs[i] x_i`` as a functional of key ``x``."""
    q = QuadraticFunctional(float(const))
    q.add_linear("x", 0.5 * np.asarray(coefs, dtype=float).reshape(-1, 1))
    return q


def square(n, i=0, scale=1.0):
    sel = np.zeros((n, n))
    sel[i, i] = scale
    q = QuadraticFunctional(0.0)
    q.add_quadratic("x", sel)
    return q


def box(n=1, lo=0.0, hi=1.0):
    return FeasibleSet(box={"x": (lo, hi)})


def ratio_problem(direction="max"):
    """(2x + 1) / (x + 2) on [0, 1]; both parts affine so every bound is exact."""
    term = FractionalTerm(
        lambda X: 2 * x_of(X) + 1, lambda X: x_of(X) + 2,
        f_upper=lambda X: affine(1, [2]), f_lower=lambda X: affine(1, [2]),
        g_upper=lambda X: affine(2, [1]), g_lower=lambda X: affine(2, [1]), name="ratio")
    return FmpProblem(direction, [[term]], space(), box())


def pt(*xs):
    return {"x": np.array(xs, dtype=float).reshape(-1, 1)}


def test_min_surrogate_numerator_vanishes():
    term = FractionalTerm(lambda X: x_of(X) ** 2, lambda X: 1 + x_of(X),
                          f_upper=lambda X: square(1), g_lower=lambda X: affine(1, [1]))
    prob = FmpProblem("min", [[term]], space(), box())
    sub = build_min_surrogate(prob, pt(1.0))
    assert sub.objective_value(sub.warm) == pytest.approx(0.5, rel=1e-10)
    # one surrogate step: u >= (1 + x^2)/2 from the numerator row, t <= 1 + x
    sol = solve(sub)
    xs = np.linspace(0, 1, 100001)
    surrogate = (1 + xs**2) ** 2 / (4 * (1 + xs))
    assert sol.objective == pytest.approx(surrogate.min(), abs=1e-7)
    assert x_of(sol.variables) == pytest.approx(xs[surrogate.argmin()], abs=1e-4)
    # the MM iterates drive the numerator to zero
    res, trace = run_mm(prob, pt(1.0), delta=1e-10, max_iter=500)
    assert x_of(res.variables) == pytest.approx(0.0, abs=1e-3)
    assert res.objective == pytest.approx(0.0, abs=1e-6)
    assert trace.is_monotone(maximize=False)


def test_direction_specific_builders():
    with pytest.raises(ValueError):
        build_min_surrogate(ratio_problem("max"), pt(0.5))
    with pytest.raises(ValueError):
        build_max_surrogate(ratio_problem("min"), pt(0.5))


@pytest.mark.parametrize("direction", ["min", "max"])
@pytest.mark.parametrize("x0", [0.0, 0.3, 1.0])
def test_warm_start_identity(direction, x0):
    prob = ratio_problem(direction)
    sub = build_surrogate(prob, pt(x0))
    true = prob.objective(pt(x0))
    assert sub.objective_value(sub.warm) == pytest.approx(true, rel=1e-10)


def test_single_ratio_max_converges_to_endpoint():
    res, trace = run_mm(ratio_problem("max"), pt(0.0))
    xs = np.linspace(0, 1, 1001)
    grid = np.max((2 * xs + 1) / (xs + 2))
    assert x_of(res.variables) == pytest.approx(1.0, abs=1e-4)
    assert res.objective == pytest.approx(grid, abs=1e-6)
    assert trace.is_monotone(maximize=True)
    assert res.converged


def test_stationary_init_stops_quickly():
    res, trace = run_mm(ratio_problem("max"), pt(1.0))
    assert res.iterations <= 2
    assert res.objective == pytest.approx(1.0, abs=1e-4)
    assert res.converged


def test_single_ratio_min():
    res, trace = run_mm(ratio_problem("min"), pt(1.0))
    assert x_of(res.variables) == pytest.approx(0.0, abs=1e-4)
    assert res.objective == pytest.approx(0.5, abs=1e-6)
    assert trace.is_monotone(maximize=False)


def test_maxmin_symmetric_terms_equalize():
    n = 2
    terms = []
    for k in range(n):
        c = np.zeros(n)
        c[k] = 1.0
        terms.append([FractionalTerm(lambda X, k=k: 1 + x_of(X, k), lambda X: 2.0,
                                     f_lower=lambda X, c=c: affine(1, c),
                                     g_upper=lambda X: affine(2, np.zeros(n)), name=f"h{k}")])
    fs = FeasibleSet(ball_keys=("x",), radius=1.0, box={"x": (0.0, 1.0)})
    prob = FmpProblem("max", terms, space(n), fs, aggregation="extreme")
    res, trace = run_mm(prob, pt(0.0, 0.0), delta=1e-8)
    vals = prob.piece_values(res.variables)
    assert vals[0] == pytest.approx(vals[1], rel=1e-3)
    assert res.objective == pytest.approx((1 + 1 / math.sqrt(2)) / 2, rel=1e-4)
    assert trace.is_monotone(maximize=True)


def test_ratio_budget_constraint():
    cap = ConstraintGroup([FractionalTerm(lambda X: x_of(X) ** 2, lambda X: 1.0,
                                          f_upper=lambda X: square(1), g_lower=lambda X: affine(1, [0]))],
                          0.25, "le", "cap")
    prob = ratio_problem("max")
    prob.constraints.append(cap)
    res, trace = run_mm(prob, pt(0.2), delta=1e-9)
    assert x_of(res.variables) == pytest.approx(0.5, abs=1e-4)
    assert res.objective == pytest.approx(0.8, abs=1e-5)
    assert prob.violation(res.variables) <= 1e-8
    assert trace.is_monotone(maximize=True)


def test_zero_numerator_in_budget_pins_the_iterate():
    # with f = 0 at the expansion the row 2 sqrt(f0) u - f0 >= x^2 reads 0 >= x^2
    cap = ConstraintGroup([FractionalTerm(lambda X: x_of(X) ** 2, lambda X: 1.0,
                                          f_upper=lambda X: square(1), g_lower=lambda X: affine(1, [0]))],
                          0.25, "le", "cap")
    prob = ratio_problem("max")
    prob.constraints.append(cap)
    res, _ = run_mm(prob, pt(0.0))
    assert x_of(res.variables) == pytest.approx(0.0, abs=1e-8)


def test_constraint_group_validation():
    with pytest.raises(ValueError):
        ConstraintGroup([], 0.0, "le")
    with pytest.raises(ValueError):
        ConstraintGroup([], 1.0, "eq")


def test_plain_term_mixture():
    # maximize x + (2x + 1)/(x + 2) - x^2 on [0, 1]; the plain part is concave
    plain = PlainTerm(lambda X: x_of(X) - x_of(X) ** 2, lower=lambda X: affine(0, [1]) - square(1))
    prob = ratio_problem("max")
    prob.pieces[0].append(plain)
    res, trace = run_mm(prob, pt(0.0), delta=1e-10)
    xs = np.linspace(0, 1, 200001)
    grid = np.max(xs - xs**2 + (2 * xs + 1) / (xs + 2))
    assert res.objective == pytest.approx(grid, rel=1e-4)
    assert trace.is_monotone(maximize=True)


def test_fixed_point_consistency():
    prob = ratio_problem("max")
    res, _ = run_mm(prob, pt(0.2), delta=1e-6)
    cand, sol = mm_step(prob, res.variables)
    assert relative_change(prob.objective(cand), res.objective) < 1e-4


def test_infeasible_init_and_expansion():
    with pytest.raises(InfeasibleInit):
        run_mm(ratio_problem("max"), pt(2.0))
    term = FractionalTerm(lambda X: -1.0, lambda X: 1.0, f_lower=lambda X: affine(-1, [0]),
                          g_upper=lambda X: affine(1, [0]))
    prob = FmpProblem("max", [[term]], space(), box())
    with pytest.raises(InfeasibleExpansion):
        build_surrogate(prob, pt(0.5))
    with pytest.raises(ValueError):
        run_mm(ratio_problem("max"), pt(0.0), delta=0.0)


def test_problem_validation():
    with pytest.raises(ValueError):
        FmpProblem("sideways", [[1]], space())
    with pytest.raises(ValueError):
        FmpProblem("min", [[]], space())
    with pytest.raises(ValueError):
        FmpProblem("min", [[1]], space(), aggregation="median")


def test_linearize_product():
    np.testing.assert_array_equal(linearize_product([3.0], "min"), [1.0])
    np.testing.assert_array_equal(linearize_product([3.0], "max"), [1.0])
    w = linearize_product([2.0, 2.0, 2.0], "min")
    assert np.allclose(w, w[0])
    w = linearize_product([2.0, 2.0], "max")
    assert w[0] == pytest.approx(w[1])
    np.testing.assert_allclose(linearize_product([1.0, 2.0], "max"), [2 * 1 * 4, 2 * 2 * 1])
    with pytest.raises(NonPositiveTermValue):
        linearize_product([1.0, 0.0], "min")
    with pytest.raises(NonPositiveTermValue):
        linearize_product([1.0, -1.0], "max")


def test_gm_min_toy_is_monotone():
    # geometric mean of (1 + (x1 - a)^2) / 1 and (1 + (x2 - b)^2) / 1
    n = 2
    terms = []
    for i, centre in enumerate((0.3, 0.8)):
        def f(X, i=i, c=centre):
            return 1 + (x_of(X, i) - c) ** 2

        def f_up(X, i=i, c=centre):
            e = np.zeros(n)
            e[i] = -2 * c
            return square(n, i) + affine(1 + c * c, e)

        terms.append([FractionalTerm(f, lambda X: 1.0, f_upper=f_up, g_lower=lambda X: affine(1, np.zeros(n)))])
    prob = FmpProblem("min", terms, space(n), FeasibleSet(box={"x": (0.0, 1.0)}), aggregation="product")
    res, trace = run_mm(prob, pt(1.0, 0.0), delta=1e-9)
    assert trace.is_monotone(maximize=False)
    np.testing.assert_allclose(np.ravel(res.variables["x"]), [0.3, 0.8], atol=1e-3)


def test_trace_records_and_monotone_check():
    t = MmTrace(objectives=[1.0, 2.0, 2.0])
    assert t.is_monotone(True)
    assert not t.is_monotone(False)
    _, trace = run_mm(ratio_problem("max"), pt(0.0))
    rec = trace.as_records()
    assert rec[0] == {"iteration": 0, "objective": trace.objectives[0]}
    assert len(rec) == trace.updates + 1


def test_relative_change():
    assert relative_change(1.0, 1.0) == 0.0
    assert relative_change(1.1, 1.0) == pytest.approx(0.1)
    assert np.isfinite(relative_change(1.0, 0.0))


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.1, 5.0), b=st.floats(0.1, 5.0), c=st.floats(0.1, 5.0), d=st.floats(0.1, 5.0),
       x0=st.floats(0.0, 1.0))
def test_affine_ratio_mm_is_monotone(a, b, c, d, x0):
    term = FractionalTerm(lambda X: a * x_of(X) + b, lambda X: c * x_of(X) + d,
                          f_upper=lambda X: affine(b, [a]), f_lower=lambda X: affine(b, [a]),
                          g_upper=lambda X: affine(d, [c]), g_lower=lambda X: affine(d, [c]))
    for direction in ("min", "max"):
        prob = FmpProblem(direction, [[term]], space(), box())
        res, trace = run_mm(prob, pt(x0), delta=1e-8)
        assert trace.is_monotone(direction == "max")
        ends = [(b) / (d), (a + b) / (c + d)]
        best = max(ends) if direction == "max" else min(ends)
        assert res.objective == pytest.approx(best, rel=1e-4)
