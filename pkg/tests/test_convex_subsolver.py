import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmpkit.convex_subsolver import (
    Expr,
    SubproblemBuilder,
    VariableSpace,
    VarSpec,
    check_feasibility,
    solve,
)
from fmpkit.errors import DimensionMismatch
from fmpkit.matrix_core import rng_for
from fmpkit.surrogate_bounds import QuadraticFunctional


def real_space(n=2, key="x"):
    return VariableSpace([VarSpec(key, (n, 1), False)])


def sq_norm(n, key="x", shift=None, scale=1.0):
    """``scale * ||x - shift||^2`` as a functional."""
    q = QuadraticFunctional(0.0)
    q.add_quadratic(key, scale * np.eye(n))
    if shift is not None:
        shift = np.asarray(shift, dtype=float).reshape(-1, 1)
        q.add_linear(key, -scale * shift)
        q.constant = scale * float(np.sum(shift**2))
    return q


def test_pack_roundtrip_complex_and_real():
    space = VariableSpace([VarSpec("a", (2, 2), True), VarSpec("b", (3, 1), False)])
    vals = {"a": np.array([[1 + 2j, 3], [4j, -1]]), "b": np.array([[1.0], [2.0], [3.0]])}
    z = space.pack(vals)
    assert z.size == 11
    back = space.unpack(z)
    np.testing.assert_array_equal(back["a"], vals["a"])
    np.testing.assert_array_equal(back["b"], vals["b"])
    with pytest.raises(DimensionMismatch):
        space.pack({"a": np.zeros((3, 3)), "b": np.zeros(3)})


def test_embed_matches_functional():
    rng = rng_for(1)
    space = VariableSpace([VarSpec("w", (3, 2), True)])
    q = QuadraticFunctional(0.7)
    q.add_linear("w", rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2)))
    L = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    R = rng.standard_normal((2, 2))
    q.add_quadratic("w", L @ L.conj().T, R @ R.T, -1)
    A, b, c = space.embed(q)
    W = {"w": rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))}
    z = space.pack(W)
    assert c + b @ z + z @ A @ z == pytest.approx(q(W), rel=1e-12)


def test_ball_projection():
    space = real_space()
    b = SubproblemBuilder(space)
    b.minimize(Expr(sq_norm(2, shift=[2.0, 0.0])))
    b.le("ball", Expr(sq_norm(2)) - 1.0)
    sol = solve(b.build({"x": np.zeros(2)}))
    np.testing.assert_allclose(sol.variables["x"].ravel(), [1.0, 0.0], atol=1e-6)
    assert sol.feasibility <= 1e-8
    assert sol.status != "fallback_warm_start"


def test_scalar_ratio():
    b = SubproblemBuilder(real_space(1))
    u = b.add_scalar("u", 1.5)
    t = b.add_scalar("t", 1.0)
    b.minimize(Expr(ratios=[(1.0, "u", "t")]))
    b.ge("u_floor", u - 1.0)
    b.le("t_cap", t - 2.0)
    sol = solve(b.build({"x": np.zeros(1)}))
    assert sol.objective == pytest.approx(0.5, abs=1e-6)
    assert sol.scalars["u"] == pytest.approx(1.0, abs=1e-6)
    assert sol.scalars["t"] == pytest.approx(2.0, abs=1e-6)


def test_max_form_matches_grid():
    # maximize 2*3*t - 9*(1 + (x - 0.5)^2) subject to t^2 <= 4 - x^2
    b = SubproblemBuilder(real_space(1))
    t = b.add_scalar("t", 1.0)
    g = sq_norm(1, shift=[0.5]) + 1.0
    b.maximize(t.scaled(6.0) - Expr(g).scaled(9.0))
    b.le("cone", Expr(sq={"t": 1.0}) + Expr(sq_norm(1)) - 4.0)
    sol = solve(b.build({"x": np.zeros(1)}))
    xs = np.linspace(-2, 2, 400001)
    grid = np.max(6 * np.sqrt(4 - xs**2) - 9 * (1 + (xs - 0.5) ** 2))
    assert sol.objective == pytest.approx(grid, abs=1e-3)


def test_check_feasibility_ball_overshoot():
    P = 3.0
    space = real_space(4)
    b = SubproblemBuilder(space)
    b.minimize(Expr.const(0.0))
    b.le("ball", Expr(sq_norm(4)) - P)
    sub = b.build({"x": np.zeros(4)})
    x = np.full(4, math.sqrt(P / 4))
    rep = check_feasibility(sub, 2 * x)
    assert rep.violations["ball"] == pytest.approx(3 * P)
    assert not rep.feasible
    assert check_feasibility(sub, x).feasible
    with pytest.raises(DimensionMismatch):
        check_feasibility(sub, np.zeros(3))


def test_infeasible_problem_falls_back():
    b = SubproblemBuilder(real_space(1))
    b.minimize(Expr(sq_norm(1)))
    b.le("impossible", Expr(sq_norm(1)) + 1.0)
    sol = solve(b.build({"x": np.array([0.3])}))
    assert sol.status == "fallback_warm_start"
    np.testing.assert_array_equal(sol.variables["x"].ravel(), [0.3])


def test_boundary_warm_start_makes_progress():
    # warm start on the ball boundary; the optimum is interior
    b = SubproblemBuilder(real_space())
    b.minimize(Expr(sq_norm(2, shift=[0.2, 0.1])))
    b.le("ball", Expr(sq_norm(2)) - 1.0)
    sol = solve(b.build({"x": np.array([1.0, 0.0])}))
    np.testing.assert_allclose(sol.variables["x"].ravel(), [0.2, 0.1], atol=1e-6)


def test_dump_subproblem(tmp_path):
    b = SubproblemBuilder(real_space())
    b.minimize(Expr(sq_norm(2, shift=[2.0, 0.0])))
    b.le("ball", Expr(sq_norm(2)) - 1.0)
    path = tmp_path / "sub.json"
    solve(b.build({"x": np.zeros(2)}), dump_path=path)
    data = json.loads(path.read_text())
    assert data["rows"][0]["name"] == "ball"
    assert data["variables"][0]["shape"] == [2, 1]


def _random_qp(seed):
    rng = rng_for(seed)
    n = int(rng.integers(1, 5))
    space = real_space(n)
    b = SubproblemBuilder(space)
    M = rng.standard_normal((n, n))
    q = QuadraticFunctional(0.0)
    q.add_quadratic("x", M @ M.T + 0.1 * np.eye(n))
    q.add_linear("x", rng.standard_normal((n, 1)))
    b.minimize(Expr(q))
    b.le("ball", Expr(sq_norm(n)) - 1.0)
    warm = rng.standard_normal(n)
    warm *= rng.uniform(0, 1) / np.linalg.norm(warm)
    return b.build({"x": warm})


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_never_worse_than_warm_start(seed):
    sub = _random_qp(seed)
    sol = solve(sub)
    warm = sub.objective_value(sub.warm)
    assert sol.objective <= warm + 1e-12 * max(1.0, abs(warm))
    assert check_feasibility(sub, sol.z).max_violation <= 1e-8


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_deterministic(seed):
    a = solve(_random_qp(seed))
    b = solve(_random_qp(seed))
    np.testing.assert_array_equal(a.z, b.z)
