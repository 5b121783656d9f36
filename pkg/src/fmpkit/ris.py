"""RIS coefficient optimization alternating with beamformer MM steps.

The RIS coefficients ``theta`` enter every effective channel affinely,
``H_k(theta) = G_k diag(theta) G + direct_k``, so the same surrogate
builders used for beamformers apply with :class:`RisImage` images.  A
theta step solves the surrogate over a convex relaxation of the coefficient
set, projects back onto the set, and keeps the projection only if the true
objective did not get worse.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel_sim import ChannelSet
from .convex_subsolver import VariableSpace, VarSpec, solve
from .errors import OutOfRange, UnsupportedKindConfig
from .fbl_metrics import NetworkState, RisImage, SystemParams
from .fmp_core import FeasibleSet, build_surrogate, mm_step, relative_change
from .matrix_core import rng_for
from .problems import BeamformerLink, initial_beamformers, make_problem, rate_prephase, required_floors
from .surrogate_bounds import QuadraticFunctional

SETS = ("D", "D1", "D2", "D3")
MODES = ("optimized", "random", "off")
MEMBERSHIP_TOL = 1e-12


@dataclass(frozen=True)
class RisConfig:
    """Coefficient set and its relaxation.

    ``D``: ``|theta_m| <= 1``.  ``D1``: ``|theta_m| = 1``.  ``D2``: amplitude
    tied to phase by :meth:`amplitude`.  ``D3``: unit modulus with phases on
    the grid ``2 pi i / phases``, ``i = 1..phases``.  ``varsigma`` loosens the
    linearized modulus floor used while optimizing over D1 and D3.
    """

    M: int = 20
    set: str = "D"
    varsigma: float = 0.05
    theta_min: float = 0.2
    varpi: float = 1.0
    phi: float = 0.0
    phases: int = 8

    def __post_init__(self):
        if self.set not in SETS:
            raise OutOfRange(f"RIS set must be one of {SETS}")
        if self.M < 1:
            raise OutOfRange("M must be >= 1")
        if not 0 <= self.varsigma < 1:
            raise OutOfRange("varsigma must lie in [0, 1)")
        if not 0 <= self.theta_min <= 1:
            raise OutOfRange("theta_min must lie in [0, 1]")
        if self.varpi < 0:
            raise OutOfRange("varpi must be nonnegative")
        if self.phases < 1:
            raise OutOfRange("phases must be >= 1")

    def amplitude(self, phase) -> np.ndarray:
        """Phase-dependent amplitude of set D2."""
        base = (np.sin(np.asarray(phase, dtype=float) - self.phi) + 1.0) / 2.0
        return self.theta_min + (1.0 - self.theta_min) * base ** self.varpi

    @property
    def grid(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(1, self.phases + 1) / self.phases


def _circular_distance(a, b):
    d = np.mod(a - b, 2.0 * np.pi)
    return np.minimum(d, 2.0 * np.pi - d)


def project(config: RisConfig, theta) -> np.ndarray:
    """Map ``theta`` onto the configured set (returned as an ``(M, 1)`` column)."""
    t = np.asarray(theta, dtype=complex).reshape(-1)
    if config.set == "D":
        out = t / np.maximum(1.0, np.abs(t))
    elif config.set == "D1":
        out = np.where(np.abs(t) > 0, t / np.where(np.abs(t) > 0, np.abs(t), 1.0), 1.0 + 0j)
    elif config.set == "D2":
        ph = np.angle(t)
        out = config.amplitude(ph) * np.exp(1j * ph)
    else:
        ph = np.mod(np.angle(t), 2.0 * np.pi)
        grid = config.grid
        dist = _circular_distance(ph[:, None], grid[None, :])
        # argmin keeps the first (smallest-phase) grid point on ties
        close = np.isclose(dist, dist.min(axis=1, keepdims=True), rtol=0, atol=1e-12)
        idx = np.argmax(close, axis=1)
        out = np.exp(1j * grid[idx])
    return out.reshape(-1, 1)


def membership(config: RisConfig, theta, tol: float = MEMBERSHIP_TOL) -> bool:
    t = np.asarray(theta, dtype=complex).reshape(-1)
    mod = np.abs(t)
    if config.set == "D":
        return bool(np.all(mod <= 1.0 + tol))
    if config.set == "D1":
        return bool(np.all(np.abs(mod - 1.0) <= tol))
    if config.set == "D2":
        return bool(np.all(np.abs(mod - config.amplitude(np.angle(t))) <= tol))
    ph = np.mod(np.angle(t), 2.0 * np.pi)
    on_grid = _circular_distance(ph[:, None], config.grid[None, :]).min(axis=1) <= 1e-9
    return bool(np.all(np.abs(mod - 1.0) <= tol) and np.all(on_grid))


def relaxation_rows(config: RisConfig, theta_bar) -> list:
    """Linearized modulus floors ``qf(theta) >= 0`` that keep the relaxation convex."""
    t = np.asarray(theta_bar, dtype=complex).reshape(-1)
    if config.set == "D":
        return []
    rows = []
    for m, tm in enumerate(t):
        if config.set == "D2":
            floor = config.theta_min ** 2
        else:
            floor = 1.0 - config.varsigma
        C = np.zeros((t.size, 1), dtype=complex)
        C[m, 0] = tm
        qf = QuadraticFunctional(-abs(tm) ** 2 - floor)
        qf.add_linear("theta", C)
        rows.append((f"modulus_floor{m}", qf))
    return rows


class RisLink:
    """RIS coefficients are the variables; beamformers and channels are fixed."""

    def __init__(self, channels: ChannelSet, beamformers, config: RisConfig, params: SystemParams):
        self.ch = channels if channels.sigma2 == 1.0 else channels.normalized()
        self.W = [np.asarray(W, dtype=complex) for W in beamformers]
        self.config = config
        self.params = params
        self.K = len(self.W)
        self.space = VariableSpace([VarSpec("theta", (self.ch.M, 1))])
        self.feasible = FeasibleSet(modulus_keys=("theta",),
                                    extra_rows=lambda X: relaxation_rows(config, X["theta"]))
        self._images = [[RisImage(Gk, self.ch.G @ W, Hd @ W) for W in self.W]
                        for Gk, Hd in zip(self.ch.G_users, self.ch.direct)]
        self.theta0 = np.ones((self.ch.M, 1), dtype=complex)

    def state_at(self, X) -> NetworkState:
        H = self.ch.effective(X["theta"])
        return NetworkState(H, [np.eye(h.shape[0]) for h in H], self.W)

    def images(self, k, X):
        return self._images[k]

    def power_bound(self, k) -> QuadraticFunctional:
        W = self.W[k]
        return QuadraticFunctional(self.params.P_s + self.params.eta * float(np.vdot(W, W).real))

    def variables(self) -> dict:
        return {"theta": self.theta0}


def theta_step(kind: str, channels: ChannelSet, beamformers, theta_bar, config: RisConfig,
               params: SystemParams, solver=solve):
    """Solve the relaxed theta surrogate once from ``theta_bar``; returns the raw solution."""
    link = RisLink(channels, beamformers, config, params)
    problem = make_problem(kind, link, params)
    X = {"theta": np.asarray(theta_bar, dtype=complex).reshape(-1, 1)}
    sub = build_surrogate(problem, X)
    sol = solver(sub)
    return sol.variables["theta"], sol, problem


def monotone_accept(problem, current, candidate):
    """Keep ``candidate`` if it is feasible and no worse than ``current`` (ties accepted)."""
    try:
        old = problem.objective(current)
        if problem.violation(candidate) > 1e-8:
            return current, old, False
        new = problem.objective(candidate)
    except (ValueError, ArithmeticError):
        return current, problem.objective(current), False
    if not np.isfinite(new):
        return current, old, False
    ok = new >= old if problem.maximize else new <= old
    return (candidate, new, True) if ok else (current, old, False)


@dataclass
class AoTrace:
    objectives: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    thetas: list = field(default_factory=list)

    @property
    def updates(self) -> int:
        return sum(1 for s in self.steps if s == "W")

    def is_monotone(self, maximize: bool, slack: float = 1e-9) -> bool:
        o = np.asarray(self.objectives)
        d = np.diff(o)
        tol = slack * np.maximum(1.0, np.abs(o[:-1]))
        return bool(np.all(d >= -tol) if maximize else np.all(d <= tol))


@dataclass
class AoResult:
    beamformers: list
    theta: np.ndarray
    objective: float
    iterations: int
    converged: bool
    state: NetworkState


def _beam_problem(kind, channels, theta, W, params):
    H = channels.effective(theta)
    st = NetworkState(H, [np.eye(h.shape[0]) for h in H], W)
    return st, make_problem(kind, BeamformerLink(st, params), params)


def _start(kind, channels, theta, params, streams):
    H = channels.effective(theta)
    W0 = initial_beamformers(H, params.P, streams)
    st = NetworkState(H, [np.eye(h.shape[0]) for h in H], W0)
    floors = required_floors(kind, st, params)
    X = st.variables()
    if floors is not None:
        X, _ = rate_prephase(BeamformerLink(st, params), params, X, floors)
    return [X[k] for k in range(st.K)]


def random_theta(config: RisConfig, M: int, seed: int = 0, trial: int = 0) -> np.ndarray:
    """Uniform random phases for ``(seed, trial)``, projected onto the configured set."""
    rng = rng_for(seed, trial, 0x715)
    return project(config, np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=M)))


def ao_driver(kind: str, channels: ChannelSet, params: SystemParams, config: RisConfig, *,
              mode: str = "optimized", streams: int = 1, delta: float = 1e-4, max_iter: int = 200,
              seed: int = 0, trial: int = 0, solver=solve):
    """Alternate one beamformer MM step with one theta step until the objective stalls.

    ``mode="random"`` fixes uniformly random phases (projected onto the set)
    and ``mode="off"`` removes the RIS path; both then optimize the
    beamformers only, with the same stopping rule.  ``mode="optimized"``
    starts from the same random draw as ``mode="random"`` for ``(seed, trial)``.
    """
    if mode not in MODES:
        raise UnsupportedKindConfig(f"mode must be one of {MODES}")
    ch = channels if channels.sigma2 == 1.0 else channels.normalized()
    if mode == "off":
        theta = None
    else:
        theta = random_theta(config, ch.M, seed, trial)
    W = _start(kind, ch, theta, params, streams)
    st, prob = _beam_problem(kind, ch, theta, W, params)
    obj = prob.objective(st.variables())
    trace = AoTrace([obj], ["init"], [True], [None if theta is None else theta.copy()])
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        start_obj = obj
        # beamformer half-step
        X = st.variables()
        try:
            cand, sol = mm_step(prob, X, solver)
        except Exception:  # noqa: BLE001 - an unbuildable step counts as no progress
            cand, sol = X, None
        if sol is not None and sol.status != "fallback_warm_start":
            X_new, obj, ok = monotone_accept(prob, X, cand)
        else:
            X_new, ok = X, False
        W = [X_new[k] for k in range(len(W))]
        trace.objectives.append(obj)
        trace.steps.append("W")
        trace.accepted.append(ok)
        trace.thetas.append(None if theta is None else theta.copy())
        # theta half-step
        if mode == "optimized":
            cand_theta = theta
            try:
                raw, tsol, _ = theta_step(kind, ch, W, theta, config, params, solver)
                if tsol.status != "fallback_warm_start":
                    cand_theta = project(config, raw)
            except Exception:  # noqa: BLE001
                cand_theta = theta
            st_old, prob_old = _beam_problem(kind, ch, theta, W, params)
            _, prob_new = _beam_problem(kind, ch, cand_theta, W, params)
            obj_old = prob_old.objective(st_old.variables())
            ok = False
            try:
                obj_new = prob_new.objective(st_old.variables())
                feas = prob_new.violation(st_old.variables()) <= 1e-8 * max(1.0, params.P)
                better = obj_new >= obj_old if prob_new.maximize else obj_new <= obj_old
                ok = bool(feas and np.isfinite(obj_new) and better)
            except (ValueError, ArithmeticError):
                ok = False
            if ok:
                theta, obj = cand_theta, obj_new
            else:
                obj = obj_old
            trace.objectives.append(obj)
            trace.steps.append("theta")
            trace.accepted.append(ok)
            trace.thetas.append(theta.copy())
        st, prob = _beam_problem(kind, ch, theta, W, params)
        if relative_change(obj, start_obj) < delta:
            converged = True
            break
    return AoResult(W, theta, obj, it, converged, st), trace
