"""Finite-blocklength performance metrics and their surrogate bounds.

Rates are in nats per channel use.  Packet lengths are given in bits and
converted with ``ln 2`` before forming delays, so a delay is measured in
channel uses.

The surrogate builders work on *images*: affine maps ``Gamma_kj(X)`` giving
the received signal matrix of stream ``j`` at user ``k`` as a function of the
optimization variables.  With beamformers as variables ``Gamma_kj = H_k W_j``;
with RIS coefficients as variables ``Gamma_kj = (G_k diag(theta) G + Gt_k) W_j``.
Both are affine, so the same bound construction serves both cases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    MultiStreamNotSupported,
    NonPositiveRate,
    OutOfRange,
)
from .matrix_core import herm, inv_pd, logdet_pd, solve_pd
from .surrogate_bounds import (
    QuadraticFunctional,
    as_column,
    logdet_lb,
    tangent_sqrt_ub,
)

LN2 = math.log(2.0)
DISPERSION_FLOOR = 1e-8
MSE_MODES = ("literal", "mmse")


def _per_user(value, K: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return np.full(K, float(arr[0]))
    if arr.size != K:
        raise DimensionMismatch(f"{name} has {arr.size} entries for {K} users")
    return arr


@dataclass(frozen=True)
class SystemParams:
    """Power budget, FBL settings and per-metric weights.

    Per-user fields accept a scalar (broadcast to every user) or a sequence.
    """

    P: float = 10.0
    P_s: float = 5.0
    eta: float = 1.0
    n: int = 256
    eps: float = 1e-5
    L_bits: float | Sequence[float] = 256.0
    r_th: float | Sequence[float] = 0.1
    alpha: float = 0.5
    alpha_k: float | Sequence[float] = 1.0
    mse_mode: str = "literal"

    def __post_init__(self):
        if not self.P > 0:
            raise OutOfRange("P must be positive")
        if self.n < 1:
            raise OutOfRange("blocklength n must be >= 1")
        if not 0 < self.eps < 0.5:
            raise OutOfRange("eps must lie in (0, 0.5)")
        if np.any(np.asarray(self.L_bits, dtype=float) <= 0):
            raise OutOfRange("packet lengths must be positive")
        if self.eta < 1:
            raise OutOfRange("eta must be >= 1")
        if self.P_s < 0:
            raise OutOfRange("P_s must be nonnegative")
        if self.mse_mode not in MSE_MODES:
            raise OutOfRange(f"mse_mode must be one of {MSE_MODES}")
        for name in ("alpha", "alpha_k", "r_th"):
            if not np.all(np.isfinite(np.asarray(getattr(self, name), dtype=float))):
                raise OutOfRange(f"{name} must be finite")

    def with_power(self, P: float) -> "SystemParams":
        return replace(self, P=float(P))

    def packet_nats(self, K: int) -> np.ndarray:
        return LN2 * _per_user(self.L_bits, K, "L_bits")

    def floors(self, K: int) -> np.ndarray:
        return _per_user(self.r_th, K, "r_th")

    def weights(self, K: int) -> np.ndarray:
        return _per_user(self.alpha_k, K, "alpha_k")

    @property
    def penalty(self) -> float:
        """``Q^{-1}(eps) / sqrt(n)``, the FBL penalty scale."""
        return qfunc_inv(self.eps) / math.sqrt(self.n)


@dataclass
class NetworkState:
    """Channels ``H_k`` (N_u x N_BS), noise covariances ``C_k`` and beamformers ``W_k``."""

    channels: list
    noise: list
    beamformers: list

    def __post_init__(self):
        self.channels = [np.atleast_2d(np.asarray(H, dtype=complex)) for H in self.channels]
        self.noise = [np.atleast_2d(np.asarray(C, dtype=complex)) for C in self.noise]
        self.beamformers = [as_column(np.asarray(W, dtype=complex)) for W in self.beamformers]
        K = len(self.channels)
        if len(self.noise) != K or len(self.beamformers) != K:
            raise DimensionMismatch("channels, noise and beamformers need one entry per user")
        for H, C, W in zip(self.channels, self.noise, self.beamformers):
            if C.shape != (H.shape[0], H.shape[0]) or W.shape[0] != H.shape[1]:
                raise DimensionMismatch("inconsistent user dimensions")

    @property
    def K(self) -> int:
        return len(self.channels)

    @property
    def n_bs(self) -> int:
        return self.channels[0].shape[1]

    def n_u(self, k: int = 0) -> int:
        return self.channels[k].shape[0]

    def variables(self) -> dict:
        return {j: W for j, W in enumerate(self.beamformers)}

    def with_beamformers(self, variables: Mapping) -> "NetworkState":
        return NetworkState(self.channels, self.noise, [variables[j] for j in range(self.K)])

    def with_channels(self, channels) -> "NetworkState":
        return NetworkState(list(channels), self.noise, self.beamformers)

    def total_power(self) -> float:
        return float(sum(np.vdot(W, W).real for W in self.beamformers))

    def user_power(self, k: int) -> float:
        W = self.beamformers[k]
        return float(np.vdot(W, W).real)

    # covariance helpers
    def signal_cov(self, k: int) -> np.ndarray:
        G = self.channels[k] @ self.beamformers[k]
        return G @ G.conj().T

    def interference_cov(self, k: int) -> np.ndarray:
        D = self.noise[k].copy()
        H = self.channels[k]
        for j, W in enumerate(self.beamformers):
            if j != k:
                G = H @ W
                D = D + G @ G.conj().T
        return herm(D)


# ---------------------------------------------------------------------------
# images


class BeamImage:
    """``Gamma(X) = H X[key]`` for a beamformer variable."""

    def __init__(self, H: np.ndarray, key):
        self.H = np.atleast_2d(H)
        self.key = key

    def value(self, variables: Mapping) -> np.ndarray:
        return self.H @ as_column(variables[self.key])

    def linear(self, A: np.ndarray) -> QuadraticFunctional:
        """Functional ``2 Re Tr(A^H Gamma(X))``."""
        out = QuadraticFunctional(0.0)
        out.add_linear(self.key, self.H.conj().T @ as_column(A))
        return out

    def gram(self, B: np.ndarray, streams: int) -> QuadraticFunctional:
        """Functional ``Tr(B Gamma Gamma^H)`` for PSD ``B``."""
        out = QuadraticFunctional(0.0)
        out.add_quadratic(self.key, herm(self.H.conj().T @ B @ self.H), np.eye(streams))
        return out


class RisImage:
    """``Gamma(theta) = G_k diag(theta) F + Gamma0`` for an RIS coefficient vector."""

    def __init__(self, G_k: np.ndarray, F: np.ndarray, gamma0: np.ndarray, key="theta"):
        self.G_k = np.atleast_2d(G_k)
        self.F = as_column(F)
        self.gamma0 = as_column(gamma0)
        self.key = key

    def value(self, variables: Mapping) -> np.ndarray:
        theta = np.asarray(variables[self.key]).ravel()
        return self.G_k @ (theta[:, None] * self.F) + self.gamma0

    def linear(self, A: np.ndarray) -> QuadraticFunctional:
        A = as_column(A)
        coef = np.conj(np.einsum("md,dm->m", self.F, A.conj().T @ self.G_k))
        out = QuadraticFunctional(2.0 * float(np.real(np.vdot(A, self.gamma0))))
        out.add_linear(self.key, coef.reshape(-1, 1))
        return out

    def gram(self, B: np.ndarray, streams: int) -> QuadraticFunctional:
        kernel = herm((self.G_k.conj().T @ B @ self.G_k) * np.conj(self.F @ self.F.conj().T))
        out = self.linear(B @ self.gamma0)
        out.constant -= float(np.real(np.trace(B @ self.gamma0 @ self.gamma0.conj().T)))
        out.add_quadratic(self.key, kernel, np.eye(1))
        return out


def beam_images(state: NetworkState, k: int) -> list:
    return [BeamImage(state.channels[k], j) for j in range(state.K)]


# ---------------------------------------------------------------------------
# metric evaluation


@lru_cache(maxsize=64)
def qfunc_inv(eps: float) -> float:
    """Inverse of the Gaussian tail ``Q(x) = erfc(x / sqrt 2) / 2`` by bisection."""
    eps = float(eps)
    if not 0.0 < eps < 1.0:
        raise OutOfRange("eps must lie in (0, 1)")
    lo, hi = -40.0, 40.0
    # bisect until the bracket stops shrinking in floating point
    while True:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if 0.5 * math.erfc(mid / math.sqrt(2.0)) > eps:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def qfunc(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def shannon_rate(k: int, state: NetworkState) -> float:
    D = state.interference_cov(k)
    S = state.signal_cov(k)
    return logdet_pd(D + S) - logdet_pd(D)


def dispersion(k: int, state: NetworkState) -> float:
    D = state.interference_cov(k)
    S = state.signal_cov(k)
    return float(2.0 * np.real(np.trace(solve_pd(D + S, S))))


def fbl_rate(k: int, state: NetworkState, params: SystemParams) -> float:
    v = max(dispersion(k, state), 0.0)
    return shannon_rate(k, state) - params.penalty * math.sqrt(v)


def user_power(k: int, state: NetworkState, params: SystemParams) -> float:
    return params.P_s + params.eta * state.user_power(k)


def ee(k: int, state: NetworkState, params: SystemParams) -> float:
    return fbl_rate(k, state, params) / user_power(k, state, params)


def gee(state: NetworkState, params: SystemParams) -> float:
    """Global EE: total rate over total consumed power (not a sum of ratios)."""
    rates = sum(fbl_rate(k, state, params) for k in range(state.K))
    power = sum(user_power(k, state, params) for k in range(state.K))
    return rates / power


def delay(k: int, state: NetworkState, params: SystemParams) -> float:
    r = fbl_rate(k, state, params)
    if r <= 0:
        raise NonPositiveRate(f"user {k} has rate {r:.3e}")
    return float(params.packet_nats(state.K)[k]) / r


def noise_power(C: np.ndarray) -> float:
    """Per-antenna noise variance of an (assumed isotropic) covariance."""
    C = np.atleast_2d(C)
    return float(np.real(np.trace(C))) / C.shape[0]


def sinr_single_stream(k: int, state: NetworkState) -> float:
    if any(W.shape[1] != 1 for W in state.beamformers):
        raise MultiStreamNotSupported("SINR metric needs one stream per user")
    H = state.channels[k]
    num = float(np.linalg.norm(H @ state.beamformers[k]) ** 2)
    den = noise_power(state.noise[k]) + sum(
        float(np.linalg.norm(H @ W) ** 2) for j, W in enumerate(state.beamformers) if j != k
    )
    return num / den


def mse(k: int, state: NetworkState, mode: str = "literal") -> float:
    """``Tr(I - Omega^{-1} S_k)`` with ``Omega = D_k`` (literal) or ``D_k + S_k`` (mmse)."""
    D = state.interference_cov(k)
    S = state.signal_cov(k)
    Omega = D + S if mode == "mmse" else D
    return float(np.real(np.trace(np.eye(D.shape[0]) - solve_pd(Omega, S))))


@dataclass(frozen=True)
class MetricSnapshot:
    shannon: np.ndarray
    dispersion: np.ndarray
    rate: np.ndarray
    ee: np.ndarray
    delay: np.ndarray
    mse: np.ndarray
    sinr: np.ndarray
    gee: float

    def as_dict(self) -> dict:
        out = {"gee": self.gee}
        for name in ("shannon", "dispersion", "rate", "ee", "delay", "mse", "sinr"):
            out[name] = [float(x) for x in getattr(self, name)]
        return out


def snapshot(state: NetworkState, params: SystemParams) -> MetricSnapshot:
    """All per-user metrics; delay is ``inf`` and SINR ``nan`` where undefined."""
    K = state.K
    rs = np.array([shannon_rate(k, state) for k in range(K)])
    v = np.array([dispersion(k, state) for k in range(K)])
    r = rs - params.penalty * np.sqrt(np.maximum(v, 0.0))
    p = np.array([user_power(k, state, params) for k in range(K)])
    L = params.packet_nats(K)
    d = np.where(r > 0, L / np.where(r > 0, r, 1.0), np.inf)
    xi = np.array([mse(k, state, params.mse_mode) for k in range(K)])
    single = all(W.shape[1] == 1 for W in state.beamformers)
    g = np.array([sinr_single_stream(k, state) if single else np.nan for k in range(K)])
    return MetricSnapshot(rs, v, r, r / p, d, xi, g, float(r.sum() / p.sum()))


# ---------------------------------------------------------------------------
# surrogate builders


def _images_and_values(k, state, images, variables):
    if images is None:
        images = beam_images(state, k)
    if variables is None:
        variables = state.variables()
    values = [as_column(img.value(variables)) for img in images]
    return images, values


def _cov_from(values, C, skip=None):
    out = np.array(C, dtype=complex)
    for j, G in enumerate(values):
        if j != skip:
            out = out + G @ G.conj().T
    return herm(out)


def _weighted_gram_sum(images, values, B, skip=None) -> QuadraticFunctional:
    total = QuadraticFunctional(0.0)
    for j, img in enumerate(images):
        if j != skip:
            total = total + img.gram(B, values[j].shape[1])
    return total


def dispersion_ub(k: int, state: NetworkState, images=None, variables=None) -> QuadraticFunctional:
    """Convex quadratic majorant of the dispersion ``v_k``.

    Writes ``v = 2 N_u - 2 Tr(Omega^{-1} D)`` with ``Omega = D + S`` and
    minorizes the trace by its affine tangent in ``(Gamma, Omega)``, where
    ``Gamma Gamma^H = D`` stacks the noise root with the interfering images.
    """
    images, values = _images_and_values(k, state, images, variables)
    C = state.noise[k]
    n_u = C.shape[0]
    D_bar = _cov_from(values, C, skip=k)
    Om_bar = _cov_from(values, C)
    Oinv = inv_pd(Om_bar)
    M = herm(Oinv @ D_bar @ Oinv)
    ub = QuadraticFunctional(
        2.0 * n_u
        - 4.0 * float(np.real(np.trace(Oinv @ C)))
        + 2.0 * float(np.real(np.trace(M @ C)))
    )
    for j, img in enumerate(images):
        if j != k:
            ub = ub + img.linear(Oinv @ values[j]).scaled(-2.0)
    return ub + _weighted_gram_sum(images, values, M).scaled(2.0)


def rate_concave_lb(
    k: int, state: NetworkState, params: SystemParams, images=None, variables=None
) -> QuadraticFunctional:
    """Concave quadratic minorant of the FBL rate of user ``k``.

    The Shannon part comes from :func:`logdet_lb` with ``Gamma = Gamma_kk`` and
    ``Omega = D_k``; the dispersion penalty is majorized by a tangent of the
    square root composed with :func:`dispersion_ub`.
    """
    images, values = _images_and_values(k, state, images, variables)
    C = state.noise[k]
    D_bar = _cov_from(values, C, skip=k)
    shannon = logdet_lb(values[k], D_bar)
    A = shannon.linear["gamma"]
    K_ker = herm(-2.0 * shannon.linear["omega"])
    lb = QuadraticFunctional(shannon.constant - float(np.real(np.trace(K_ker @ C))))
    lb = lb + images[k].linear(A)
    lb = lb - _weighted_gram_sum(images, values, K_ker)

    v_bar = float(2.0 * np.real(np.trace(solve_pd(D_bar + values[k] @ values[k].conj().T,
                                                   values[k] @ values[k].conj().T))))
    tangent = tangent_sqrt_ub(max(v_bar, DISPERSION_FLOOR))
    v_ub = dispersion_ub(k, state, images, variables)
    penalty = v_ub.scaled(float(tangent.slopes[0])) + tangent.constant
    return lb - penalty.scaled(params.penalty)


def mse_ub(k: int, state: NetworkState, mode: str = "literal", images=None, variables=None) -> QuadraticFunctional:
    """Convex quadratic majorant of the MSE of user ``k``."""
    images, values = _images_and_values(k, state, images, variables)
    C = state.noise[k]
    n_u = C.shape[0]
    skip = None if mode == "mmse" else k
    Om_bar = _cov_from(values, C, skip=skip)
    Oinv = inv_pd(Om_bar)
    S_bar = values[k] @ values[k].conj().T
    M = herm(Oinv @ S_bar @ Oinv)
    ub = QuadraticFunctional(n_u + float(np.real(np.trace(M @ C))))
    ub = ub - images[k].linear(Oinv @ values[k])
    return ub + _weighted_gram_sum(images, values, M, skip=skip)


def sinr_concave_lb(k: int, state: NetworkState, images=None, variables=None) -> QuadraticFunctional:
    """Concave quadratic minorant of the single-stream SINR of user ``k``."""
    if any(W.shape[1] != 1 for W in state.beamformers):
        raise MultiStreamNotSupported("SINR metric needs one stream per user")
    images, values = _images_and_values(k, state, images, variables)
    sigma2 = noise_power(state.noise[k])
    y_bar = sigma2 + sum(float(np.vdot(v, v).real) for j, v in enumerate(values) if j != k)
    x_bar = values[k]
    n_u = x_bar.shape[0]
    lb = images[k].linear(x_bar / y_bar)
    scale = float(np.vdot(x_bar, x_bar).real) / y_bar**2
    interference = _weighted_gram_sum(images, values, np.eye(n_u), skip=k) + sigma2
    return lb - interference.scaled(scale)


def power_functional(k: int, params: SystemParams, streams: int, n_bs: int, key=None) -> QuadraticFunctional:
    """Exact ``P_s + eta Tr(W_k W_k^H)`` as a convex quadratic in beamformer ``key``."""
    out = QuadraticFunctional(params.P_s)
    out.add_quadratic(k if key is None else key, params.eta * np.eye(n_bs), np.eye(streams))
    return out
