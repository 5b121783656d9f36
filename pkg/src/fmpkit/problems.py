"""Catalogue of beamforming problems and the Dinkelbach-type baselines.

Every problem is expressed over a *link*: an object that fixes what the
optimization variables are (beamformers, or RIS coefficients with fixed
beamformers), how to rebuild a :class:`NetworkState` from them, and which
affine images feed the surrogate builders.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .convex_subsolver import VariableSpace, VarSpec, solve
from .errors import InfeasibleInit, UnsupportedKindConfig
from .fbl_metrics import (
    NetworkState,
    SystemParams,
    beam_images,
    fbl_rate,
    mse,
    mse_ub,
    noise_power,
    power_functional,
    rate_concave_lb,
    sinr_concave_lb,
    sinr_single_stream,
    user_power,
)
from .fmp_core import (
    FeasibleSet,
    FmpProblem,
    FractionalTerm,
    MmResult,
    MmTrace,
    PlainConstraint,
    PlainTerm,
    build_surrogate,
    relative_change,
    run_mm,
)
from .surrogate_bounds import QuadraticFunctional

KINDS = (
    "sum_delay",
    "gm_delay",
    "sum_mse",
    "maxmin_mse",
    "see_gee",
    "maxmin_see",
    "wsee",
    "gmee",
    "wsum_sinr",
    "maxmin_ee",
)
MIN_KINDS = ("sum_delay", "gm_delay", "sum_mse", "maxmin_mse")
QOS_KINDS = ("wsee", "gmee", "maxmin_ee")
POSITIVE_RATE_KINDS = ("sum_delay", "gm_delay", "see_gee", "maxmin_see", "wsee", "gmee", "maxmin_ee")
RATE_FLOOR = 1e-3


# ---------------------------------------------------------------------------
# links


class BeamformerLink:
    """Beamformers ``W_0..W_{K-1}`` are the variables; channels are fixed."""

    def __init__(self, state: NetworkState, params: SystemParams):
        self.base = state
        self.params = params
        self.K = state.K
        self.space = VariableSpace([VarSpec(j, W.shape) for j, W in enumerate(state.beamformers)])
        self.feasible = FeasibleSet(ball_keys=tuple(range(self.K)), radius=params.P)

    def state_at(self, X: Mapping) -> NetworkState:
        return self.base.with_beamformers(X)

    def images(self, k: int, X: Mapping):
        return beam_images(self.base, k)

    def power_bound(self, k: int) -> QuadraticFunctional:
        W = self.base.beamformers[k]
        return power_functional(k, self.params, W.shape[1], W.shape[0])

    def variables(self) -> dict:
        return self.base.variables()


def as_link(target, params: SystemParams):
    if isinstance(target, NetworkState):
        return BeamformerLink(target, params)
    return target


def initial_beamformers(channels: Sequence[np.ndarray], P: float, streams: int = 1) -> list:
    """Leading right singular directions of each ``H_k``, equal power per stream.

    The result meets the power budget with equality.
    """
    K = len(channels)
    out = []
    for H in channels:
        _, _, Vh = np.linalg.svd(np.atleast_2d(H))
        V = Vh.conj().T
        cols = [V[:, i % V.shape[1]] for i in range(streams)]
        out.append(np.column_stack(cols) * math.sqrt(P / (K * streams)))
    total = sum(float(np.vdot(W, W).real) for W in out)
    return [W * math.sqrt(P / total) for W in out]


# ---------------------------------------------------------------------------
# term factories


def _const(value: float):
    qf = QuadraticFunctional(float(value))
    return lambda X: qf


class _Terms:
    """Metric evaluators and bound builders for one link."""

    def __init__(self, link, params: SystemParams):
        self.link = link
        self.params = params
        self.K = link.K

    def rate(self, k):
        return lambda X: fbl_rate(k, self.link.state_at(X), self.params)

    def rate_lb(self, k):
        return lambda X: rate_concave_lb(k, self.link.state_at(X), self.params,
                                         images=self.link.images(k, X), variables=X)

    def power(self, k):
        return lambda X: user_power(k, self.link.state_at(X), self.params)

    def power_ub(self, k):
        qf = self.link.power_bound(k)
        return lambda X: qf

    def sum_rate(self):
        return lambda X: sum(self.rate(k)(X) for k in range(self.K))

    def sum_rate_lb(self):
        return lambda X: sum((self.rate_lb(k)(X) for k in range(self.K)), QuadraticFunctional(0.0))

    def sum_power(self):
        return lambda X: sum(self.power(k)(X) for k in range(self.K))

    def sum_power_ub(self):
        total = sum((self.link.power_bound(k) for k in range(self.K)), QuadraticFunctional(0.0))
        return lambda X: total

    def delay_term(self, k, weight=1.0):
        L = float(self.params.packet_nats(self.K)[k])
        return FractionalTerm(_const_value(L), self.rate(k), f_upper=_const(L),
                              g_lower=self.rate_lb(k), weight=weight, name=f"delay{k}")

    def ee_term(self, k, weight=1.0):
        return FractionalTerm(self.rate(k), self.power(k), f_lower=self.rate_lb(k),
                              g_upper=self.power_ub(k), weight=weight, name=f"ee{k}")

    def rate_term(self, k, weight=1.0):
        return PlainTerm(self.rate(k), lower=self.rate_lb(k), weight=weight, name=f"rate{k}")

    def mse_term(self, k):
        mode = self.params.mse_mode
        return PlainTerm(
            lambda X: mse(k, self.link.state_at(X), mode),
            upper=lambda X: mse_ub(k, self.link.state_at(X), mode,
                                   images=self.link.images(k, X), variables=X),
            name=f"mse{k}",
        )

    def sinr_term(self, k, weight=1.0):
        def num(X):
            st = self.link.state_at(X)
            return float(np.linalg.norm(st.channels[k] @ st.beamformers[k]) ** 2)

        def den(X):
            st = self.link.state_at(X)
            return noise_power(st.noise[k]) + sum(
                float(np.linalg.norm(st.channels[k] @ W) ** 2)
                for j, W in enumerate(st.beamformers) if j != k)

        return FractionalTerm(
            num, den, weight=weight, name=f"sinr{k}",
            ratio_bound=lambda X: sinr_concave_lb(k, self.link.state_at(X),
                                                  images=self.link.images(k, X), variables=X),
        )

    def qos(self, floors):
        return [PlainConstraint(self.rate(k), self.rate_lb(k), float(floors[k]), name=f"qos{k}")
                for k in range(self.K)]


def _const_value(v: float):
    return lambda X: v


def _alpha_vector(params: SystemParams, K: int) -> np.ndarray:
    a = np.atleast_1d(np.asarray(params.alpha, dtype=float))
    return np.full(K, float(a[0])) if a.size == 1 else a


def make_problem(kind: str, target, params: SystemParams) -> FmpProblem:
    """Build the FMP problem of ``kind`` over a link (or a :class:`NetworkState`)."""
    if kind not in KINDS:
        raise UnsupportedKindConfig(f"unknown problem kind {kind!r}")
    link = as_link(target, params)
    T = _Terms(link, params)
    K = link.K
    w = params.weights(K)
    qos = T.qos(params.floors(K)) if kind in QOS_KINDS else []
    common = dict(space=link.space, feasible=link.feasible, name=kind)

    if kind == "sum_delay":
        return FmpProblem("min", [[T.delay_term(k) for k in range(K)]], **common)
    if kind == "gm_delay":
        return FmpProblem("min", [[T.delay_term(k)] for k in range(K)], aggregation="product", **common)
    if kind == "sum_mse":
        return FmpProblem("min", [[T.mse_term(k) for k in range(K)]], **common)
    if kind == "maxmin_mse":
        return FmpProblem("min", [[T.mse_term(k)] for k in range(K)], aggregation="extreme", **common)
    if kind == "see_gee":
        alpha = np.atleast_1d(np.asarray(params.alpha, dtype=float))
        if alpha.size != 1 or not 0.0 <= alpha[0] <= 1.0:
            raise UnsupportedKindConfig("see_gee needs a scalar alpha in [0, 1]")
        a = float(alpha[0])
        piece = [T.rate_term(k, a) for k in range(K)] if a > 0 else []
        if a < 1:
            piece.append(FractionalTerm(T.sum_rate(), T.sum_power(), f_lower=T.sum_rate_lb(),
                                        g_upper=T.sum_power_ub(), weight=1.0 - a, name="gee"))
        return FmpProblem("max", [piece], **common)
    if kind == "maxmin_see":
        alpha = _alpha_vector(params, K)
        if np.any(alpha < 0) or np.any(alpha > 1):
            raise UnsupportedKindConfig("maxmin_see needs alpha_k in [0, 1]")
        pieces = []
        for k in range(K):
            piece = []
            if alpha[k] > 0:
                piece.append(T.rate_term(k, alpha[k]))
            if alpha[k] < 1:
                piece.append(T.ee_term(k, 1.0 - alpha[k]))
            pieces.append(piece)
        return FmpProblem("max", pieces, aggregation="extreme", **common)
    if kind == "wsee":
        return FmpProblem("max", [[T.ee_term(k, w[k]) for k in range(K)]],
                          plain_constraints=qos, **common)
    if kind == "gmee":
        # weights scale the geometric mean by prod(alpha_k)^(1/K) and leave the maximizer unchanged
        return FmpProblem("max", [[T.ee_term(k, w[k])] for k in range(K)], aggregation="product",
                          plain_constraints=qos, **common)
    if kind == "maxmin_ee":
        return FmpProblem("max", [[T.ee_term(k)] for k in range(K)], aggregation="extreme",
                          plain_constraints=qos, **common)
    # wsum_sinr
    st = link.state_at(link.variables())
    if any(W.shape[1] != 1 for W in st.beamformers):
        raise UnsupportedKindConfig("wsum_sinr needs one stream per user")
    return FmpProblem("max", [[T.sinr_term(k, w[k]) for k in range(K)]], **common)


# ---------------------------------------------------------------------------
# feasible start


def required_floors(kind: str, state: NetworkState, params: SystemParams):
    """Rate floors the start point must satisfy, or ``None`` if none apply."""
    K = state.K
    if kind in QOS_KINDS:
        return np.maximum(params.floors(K), RATE_FLOOR)
    if kind in POSITIVE_RATE_KINDS:
        return np.full(K, RATE_FLOOR)
    return None


def rate_prephase(link, params: SystemParams, X0: Mapping, floors, max_iter: int = 50):
    """Push every rate above its floor by maximizing ``min_k (r_k - floor_k)``."""
    T = _Terms(link, params)
    K = link.K
    pieces = []
    for k in range(K):
        f = float(floors[k])
        rate, lb = T.rate(k), T.rate_lb(k)
        pieces.append([PlainTerm(lambda X, rate=rate, f=f: rate(X) - f,
                                 lower=lambda X, lb=lb, f=f: lb(X) - f, name=f"margin{k}")])
    prob = FmpProblem("max", pieces, link.space, link.feasible, aggregation="extreme", name="prephase")

    def margin(X):
        return min(T.rate(k)(X) - float(floors[k]) for k in range(K))

    if margin(X0) > 0:
        return dict(X0), 0
    res, trace = run_mm(prob, X0, max_iter=max_iter, delta=1e-12, stop_when=lambda X: margin(X) > 0)
    if margin(res.variables) <= 0:
        raise InfeasibleInit("rate floors not reached from the initial beamformers")
    return res.variables, trace.updates


def prepare_start(kind: str, state: NetworkState, params: SystemParams, streams: int | None = None):
    """Initial beamformers for ``state``'s channels, made feasible for ``kind``."""
    if streams is None:
        streams = state.beamformers[0].shape[1]
    W0 = initial_beamformers(state.channels, params.P, streams)
    st = NetworkState(state.channels, state.noise, W0)
    floors = required_floors(kind, st, params)
    X = st.variables()
    if floors is not None:
        X, _ = rate_prephase(BeamformerLink(st, params), params, X, floors)
    return st.with_beamformers(X)


def solve_kind(kind: str, state: NetworkState, params: SystemParams, *, delta: float = 1e-4,
               max_iter: int = 200, start: NetworkState | None = None, solver=solve):
    """Prepare a feasible start and run the MM loop for ``kind``."""
    st = prepare_start(kind, state, params) if start is None else start
    problem = make_problem(kind, st, params)
    result, trace = run_mm(problem, st.variables(), delta=delta, max_iter=max_iter, solver=solver)
    return result, trace, problem


# ---------------------------------------------------------------------------
# Dinkelbach-type baselines


@dataclass
class BaselineTrace:
    objectives: list = field(default_factory=list)
    outer_index: list = field(default_factory=list)

    @property
    def updates(self) -> int:
        return len(self.objectives) - 1


def _frozen_terms(link, params, X):
    T = _Terms(link, params)
    lbs = [T.rate_lb(k)(X) for k in range(link.K)]
    pws = [link.power_bound(k) for k in range(link.K)]
    return lbs, pws


def _parametric_step(link, params, Y, pieces, aggregation, qos_lbs, floors):
    plain = []
    if qos_lbs is not None:
        plain = [PlainConstraint(lambda X, q=q: q(X), (lambda X, q=q: q), float(floors[k]), f"qos{k}")
                 for k, q in enumerate(qos_lbs)]
    prob = FmpProblem("max", pieces, link.space, link.feasible, aggregation=aggregation,
                      plain_constraints=plain, name="parametric")
    sol = solve(build_surrogate(prob, Y))
    return sol


def gda_maxmin_ee(state: NetworkState, params: SystemParams, delta1: float = 1e-4,
                  delta2: float = 1e-5, *, max_outer: int = 200, max_inner: int = 50,
                  start: NetworkState | None = None):
    """Two-loop baseline for max-min EE: MM bound refresh outside, GDA inside.

    Every inner solve is one beamformer update in the returned trace.
    """
    st = prepare_start("maxmin_ee", state, params) if start is None else start
    link = BeamformerLink(st, params)
    K = st.K
    floors = params.floors(K)

    def true_obj(X):
        s = st.with_beamformers(X)
        return min(fbl_rate(k, s, params) / user_power(k, s, params) for k in range(K))

    X = st.variables()
    if min(fbl_rate(k, st, params) - floors[k] for k in range(K)) < -1e-12:
        raise InfeasibleInit("rate floors violated at the start point")
    obj = true_obj(X)
    trace = BaselineTrace([obj], [0])
    for outer in range(1, max_outer + 1):
        lbs, pws = _frozen_terms(link, params, X)

        def surrogate_ee(Y):
            return min(lbs[k](Y) / pws[k](Y) for k in range(K))

        Y = X
        prev = surrogate_ee(Y)
        for _ in range(max_inner):
            mu = prev
            pieces = [[PlainTerm(lambda Z, k=k, mu=mu: lbs[k](Z) - mu * pws[k](Z),
                                 lower=lambda Z, k=k, mu=mu: lbs[k] - pws[k].scaled(mu))]
                      for k in range(K)]
            sol = _parametric_step(link, params, Y, pieces, "extreme", lbs, floors)
            Z = sol.variables
            new = surrogate_ee(Z) if sol.status != "fallback_warm_start" else prev
            accepted = new >= prev and link.feasible.violation(Z) <= 1e-8 * max(1.0, params.P)
            if accepted:
                Y = Z
            trace.objectives.append(true_obj(Y))
            trace.outer_index.append(outer)
            if not accepted or relative_change(new, prev) < delta2:
                break
            prev = new
        new_obj = true_obj(Y)
        change = relative_change(new_obj, obj)
        if new_obj >= obj:
            X, obj = Y, new_obj
        if new_obj < obj or change < delta1:
            break
    return MmResult(X, obj, trace.updates, True), trace


def dinkelbach_gee(state: NetworkState, params: SystemParams, delta: float = 1e-4,
                   delta2: float = 1e-5, *, max_outer: int = 200, max_inner: int = 50,
                   start: NetworkState | None = None):
    """Two-loop baseline for GEE: MM bound refresh outside, Dinkelbach inside."""
    st = prepare_start("see_gee", state, params) if start is None else start
    link = BeamformerLink(st, params)
    K = st.K

    def true_obj(X):
        s = st.with_beamformers(X)
        rates = sum(fbl_rate(k, s, params) for k in range(K))
        return rates / sum(user_power(k, s, params) for k in range(K))

    X = st.variables()
    obj = true_obj(X)
    trace = BaselineTrace([obj], [0])
    for outer in range(1, max_outer + 1):
        lbs, pws = _frozen_terms(link, params, X)
        num = sum(lbs, QuadraticFunctional(0.0))
        den = sum(pws, QuadraticFunctional(0.0))
        Y = X
        prev = num(Y) / den(Y)
        for _ in range(max_inner):
            lam = prev
            piece = [PlainTerm(lambda Z, lam=lam: num(Z) - lam * den(Z),
                               lower=lambda Z, lam=lam: num - den.scaled(lam))]
            sol = _parametric_step(link, params, Y, [piece], "sum", None, None)
            Z = sol.variables
            new = num(Z) / den(Z) if sol.status != "fallback_warm_start" else prev
            accepted = new >= prev and link.feasible.violation(Z) <= 1e-8 * max(1.0, params.P)
            if accepted:
                Y = Z
            trace.objectives.append(true_obj(Y))
            trace.outer_index.append(outer)
            if not accepted or relative_change(new, prev) < delta2:
                break
            prev = new
        new_obj = true_obj(Y)
        change = relative_change(new_obj, obj)
        if new_obj >= obj:
            X, obj = Y, new_obj
        if new_obj < obj or change < delta:
            break
    return MmResult(X, obj, trace.updates, True), trace


@dataclass
class ComparisonReport:
    kinds: tuple
    finals: dict
    updates: dict
    traces: dict

    def mean_updates(self, kind: str, method: str) -> float:
        return float(np.mean(self.updates[(kind, method)]))

    def mean_final(self, kind: str, method: str) -> float:
        return float(np.mean(self.finals[(kind, method)]))


BASELINES = {"maxmin_ee": ("maxmin_ee", gda_maxmin_ee, "gda"), "gee": ("see_gee", dinkelbach_gee, "dinkelbach")}


def compare_methods(kinds: Sequence[str], trials: int, seed: int, *, params: SystemParams | None = None,
                    dims: tuple = (2, 5, 5), streams: int = 1, delta: float = 1e-4,
                    channel_factory=None) -> ComparisonReport:
    """Run the framework and its Dinkelbach-type baseline on identical channels.

    ``kinds`` draws from ``{"maxmin_ee", "gee"}``; ``gee`` is the GEE objective
    (``see_gee`` with ``alpha = 0``) compared against single-ratio Dinkelbach.
    ``channel_factory(seed, trial)`` must return a :class:`NetworkState`;
    it defaults to the simulated no-RIS channel model.
    """
    from dataclasses import replace

    from .channel_sim import default_state_factory

    if trials < 1:
        raise ValueError("trials must be >= 1")
    params = SystemParams() if params is None else params
    factory = channel_factory or default_state_factory(dims, streams)
    finals, updates, traces = {}, {}, {}
    for kind in kinds:
        if kind not in BASELINES:
            raise UnsupportedKindConfig(f"no baseline for {kind!r}")
        fw_kind, baseline, bname = BASELINES[kind]
        p = replace(params, alpha=0.0) if kind == "gee" else params
        for t in range(trials):
            state = factory(seed, t)
            start = prepare_start(fw_kind, state, p)
            res, tr, _ = solve_kind(fw_kind, state, p, delta=delta, start=start)
            bres, btr = baseline(state, p, delta, start=start)
            finals.setdefault((kind, "framework"), []).append(res.objective)
            finals.setdefault((kind, bname), []).append(bres.objective)
            updates.setdefault((kind, "framework"), []).append(tr.updates)
            updates.setdefault((kind, bname), []).append(btr.updates)
            traces.setdefault((kind, "framework"), []).append(list(tr.objectives))
            traces.setdefault((kind, bname), []).append(list(btr.objectives))
    return ComparisonReport(tuple(kinds), finals, updates, traces)
