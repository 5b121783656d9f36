"""Geometric channel simulation for a BS, an RIS and a cluster of users.

Large-scale fading follows a log-distance path-loss law per link class;
small-scale fading is Rician on the RIS links (ULA steering vectors for the
line-of-sight part) and Rayleigh on the direct links.  Every draw comes from
a Philox stream keyed by ``(seed, trial)``, so a trial is reproducible on its
own regardless of how many trials ran before it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BelowReferenceDistance, DimensionMismatch, OutOfRange
from .matrix_core import complex_gaussian, rng_for

AMPLITUDE_MODES = ("amplitude", "literal")


@dataclass(frozen=True)
class LinkLoss:
    """``PL(d) = -pl0 + gain - 10 tau log10(d)`` in dB, valid for ``d >= 1`` m."""

    pl0: float
    gain: float
    tau: float


@dataclass(frozen=True)
class PathLossModel:
    direct: LinkLoss = LinkLoss(35.9, 6.0, 3.75)
    bs_ris: LinkLoss = LinkLoss(30.0, 6.0, 2.2)
    ris_user: LinkLoss = LinkLoss(30.0, 5.5, 2.2)
    amplitude_mode: str = "amplitude"

    def __post_init__(self):
        if self.amplitude_mode not in AMPLITUDE_MODES:
            raise OutOfRange(f"amplitude_mode must be one of {AMPLITUDE_MODES}")

    def link(self, name: str) -> LinkLoss:
        return getattr(self, name)


def pathloss_db(loss: LinkLoss, d: float) -> float:
    if d < 1.0:
        raise BelowReferenceDistance(f"distance {d} m is below the 1 m reference")
    return -loss.pl0 + loss.gain - 10.0 * loss.tau * math.log10(d)


def amplitude(pl_db: float, mode: str = "amplitude") -> float:
    """Channel amplitude scale: ``10^(PL/20)`` or, in ``literal`` mode, ``10^(PL/10)``."""
    return 10.0 ** (pl_db / (20.0 if mode == "amplitude" else 10.0))


def steering_vector(n: int, psi: float, spacing: float = 0.5) -> np.ndarray:
    """ULA response ``exp(j 2 pi spacing (i-1) sin psi)`` for ``i = 1..n``."""
    return np.exp(2j * np.pi * spacing * np.arange(n) * math.sin(psi))


def noise_variance(bandwidth_hz: float = 1.5e6, density_dbm_hz: float = -174.0) -> float:
    """Thermal noise power in watts."""
    return 10.0 ** ((density_dbm_hz + 10.0 * math.log10(bandwidth_hz) - 30.0) / 10.0)


@dataclass(frozen=True)
class Topology:
    bs: tuple = (0.0, 0.0, 25.0)
    ris: tuple = (140.0, 0.0, 15.0)
    user_center: tuple = (130.0, 0.0)
    user_side: float = 20.0
    user_height: float = 1.5


@dataclass(frozen=True)
class Dimensions:
    K: int = 2
    n_bs: int = 5
    n_u: int = 5
    M: int = 20

    def __post_init__(self):
        if min(self.K, self.n_bs, self.n_u) < 1 or self.M < 0:
            raise OutOfRange("dimensions must be positive")


@dataclass
class ChannelSet:
    """Channels of one trial.

    ``G``: RIS <- BS (``M x N_BS``); ``G_users[k]``: user <- RIS (``N_u x M``);
    ``direct[k]``: user <- BS (``N_u x N_BS``).  ``sigma2`` is the per-antenna
    noise power of the channels as stored.
    """

    G: np.ndarray
    G_users: list
    direct: list
    sigma2: float
    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def K(self) -> int:
        return len(self.direct)

    @property
    def M(self) -> int:
        return self.G.shape[0]

    def normalized(self) -> "ChannelSet":
        """Scale user-side channels by ``1/sigma`` so the noise becomes identity."""
        s = math.sqrt(self.sigma2)
        return ChannelSet(self.G.copy(), [Gk / s for Gk in self.G_users],
                          [Hd / s for Hd in self.direct], 1.0, self.positions)

    def effective(self, theta) -> list:
        """``H_k = G_k diag(theta) G + direct_k``; ``theta=None`` switches the RIS off."""
        if theta is None or self.M == 0:
            return [Hd.copy() for Hd in self.direct]
        t = np.asarray(theta).reshape(-1)
        if t.size != self.M:
            raise DimensionMismatch(f"theta has {t.size} entries for {self.M} elements")
        return [Gk @ (t[:, None] * self.G) + Hd for Gk, Hd in zip(self.G_users, self.direct)]


def _rician(rng, n_rx, n_tx, kappa, spacing):
    psi_a, psi_d = rng.uniform(0.0, 2 * np.pi, size=2)
    los = np.outer(steering_vector(n_rx, psi_a, spacing), steering_vector(n_tx, psi_d, spacing).conj())
    nlos = complex_gaussian(rng, (n_rx, n_tx))
    return math.sqrt(kappa / (1 + kappa)) * los + math.sqrt(1 / (1 + kappa)) * nlos


def generate(dims: Dimensions, seed: int, trial: int = 0, *, topology: Topology = Topology(),
             model: PathLossModel = PathLossModel(), rician: float = 3.0, spacing: float = 0.5,
             bandwidth_hz: float = 1.5e6) -> ChannelSet:
    """Draw the channels of trial ``trial`` under ``seed``."""
    rng = rng_for(seed, trial)
    c = np.asarray(topology.user_center, dtype=float)
    xy = c + rng.uniform(-topology.user_side / 2, topology.user_side / 2, size=(dims.K, 2))
    users = np.column_stack([xy, np.full(dims.K, topology.user_height)])
    bs, ris = np.asarray(topology.bs, float), np.asarray(topology.ris, float)
    mode = model.amplitude_mode

    a_g = amplitude(pathloss_db(model.bs_ris, float(np.linalg.norm(ris - bs))), mode)
    G = a_g * _rician(rng, dims.M, dims.n_bs, rician, spacing)
    G_users = []
    for u in users:
        a = amplitude(pathloss_db(model.ris_user, float(np.linalg.norm(u - ris))), mode)
        G_users.append(a * _rician(rng, dims.n_u, dims.M, rician, spacing))
    direct = []
    for u in users:
        a = amplitude(pathloss_db(model.direct, float(np.linalg.norm(u - bs))), mode)
        direct.append(a * complex_gaussian(rng, (dims.n_u, dims.n_bs)))
    return ChannelSet(G, G_users, direct, noise_variance(bandwidth_hz), users)


def to_state(channels: ChannelSet, theta=None, streams: int = 1, beamformers=None):
    """Noise-normalized :class:`NetworkState` for RIS setting ``theta``.

    Beamformers default to zeros of shape ``N_BS x streams``; callers normally
    replace them with :func:`fmpkit.problems.initial_beamformers`.
    """
    from .fbl_metrics import NetworkState

    ch = channels if channels.sigma2 == 1.0 else channels.normalized()
    H = ch.effective(theta)
    n_bs = H[0].shape[1]
    noise = [np.eye(h.shape[0]) for h in H]
    if beamformers is None:
        beamformers = [np.zeros((n_bs, streams), dtype=complex) for _ in H]
    return NetworkState(H, noise, beamformers)


CHANNEL_MODELS = ("simulated", "iid")


def draw_channels(kind: str, dims: Dimensions, seed: int, trial: int = 0, **kwargs) -> ChannelSet:
    if kind == "simulated":
        return generate(dims, seed, trial, **kwargs)
    if kind == "iid":
        return iid_channels(dims, seed, trial)
    raise OutOfRange(f"channel model must be one of {CHANNEL_MODELS}")


def default_state_factory(dims: tuple = (2, 5, 5), streams: int = 1, kind: str = "simulated", **kwargs):
    """``(seed, trial) -> NetworkState`` on the direct links only (no RIS)."""
    K, n_bs, n_u = dims

    def factory(seed, trial):
        ch = draw_channels(kind, Dimensions(K, n_bs, n_u, 0), seed, trial, **kwargs)
        return to_state(ch, None, streams)

    return factory


def iid_channels(dims: Dimensions, seed: int, trial: int = 0) -> ChannelSet:
    """Unit-variance Rayleigh channels on every link with unit noise power."""
    rng = rng_for(seed, trial, 1)
    G = complex_gaussian(rng, (dims.M, dims.n_bs))
    G_users = [complex_gaussian(rng, (dims.n_u, dims.M)) for _ in range(dims.K)]
    direct = [complex_gaussian(rng, (dims.n_u, dims.n_bs)) for _ in range(dims.K)]
    return ChannelSet(G, G_users, direct, 1.0)
