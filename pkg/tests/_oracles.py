"""Independent reference computations shared by the test modules.

Nothing here calls the surrogate builders: values come from direct formulas,
gradients from central finite differences.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erfcinv

from fmpkit.fbl_metrics import NetworkState
from fmpkit.matrix_core import complex_gaussian, rng_for

FD_STEP = 1e-5


def real_directions(shape, hermitian=False):
    """Unit directions spanning the real parameterization of a complex array."""
    rows, cols = shape
    out = []
    if hermitian:
        for i in range(rows):
            for j in range(i, rows):
                E = np.zeros(shape, dtype=complex)
                if i == j:
                    E[i, i] = 1.0
                    out.append(E)
                    continue
                E[i, j], E[j, i] = 1.0, 1.0
                out.append(E)
                F = np.zeros(shape, dtype=complex)
                F[i, j], F[j, i] = 1j, -1j
                out.append(F)
        return out
    for i in range(rows):
        for j in range(cols):
            for unit in (1.0, 1j):
                E = np.zeros(shape, dtype=complex)
                E[i, j] = unit
                out.append(E)
    return out


def fd_gradient(f, point: dict, hermitian_keys=(), real_keys=(), h=FD_STEP) -> np.ndarray:
    """Central-difference derivatives of ``f(point)`` along every real coordinate."""
    grads = []
    for key in sorted(point, key=str):
        X = np.atleast_2d(np.asarray(point[key], dtype=complex))
        if X.shape[0] == 1 and np.asarray(point[key]).ndim == 1:
            X = X.T
        if key in real_keys:
            dirs = [d for d in real_directions(X.shape) if np.all(d.imag == 0)]
        else:
            dirs = real_directions(X.shape, hermitian=key in hermitian_keys)
        for E in dirs:
            up = dict(point)
            dn = dict(point)
            up[key] = X + h * E
            dn[key] = X - h * E
            grads.append((f(up) - f(dn)) / (2 * h))
    return np.array(grads)


def gradients_match(bound, true, point, rtol=1e-4, **kw) -> bool:
    gb = fd_gradient(bound, point, **kw)
    gt = fd_gradient(true, point, **kw)
    scale = max(np.linalg.norm(gt), 1e-8)
    return bool(np.linalg.norm(gb - gt) <= rtol * scale)


def relative_gap(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def qfunc_inv_oracle(eps: float) -> float:
    return math.sqrt(2.0) * float(erfcinv(2.0 * eps))


def random_pd_matrix(rng, n, floor=0.1):
    X = complex_gaussian(rng, (n, n))
    return X @ X.conj().T + floor * np.eye(n)


def random_state(seed, K=2, n_bs=3, n_u=2, streams=1, P=4.0, noise_floor=0.5) -> NetworkState:
    """Random channels, PD noise and beamformers scaled into the power ball."""
    rng = rng_for(seed, 0xC0)
    H = [complex_gaussian(rng, (n_u, n_bs)) for _ in range(K)]
    C = [random_pd_matrix(rng, n_u, noise_floor) for _ in range(K)]
    W = [complex_gaussian(rng, (n_bs, streams)) for _ in range(K)]
    total = sum(float(np.vdot(w, w).real) for w in W)
    scale = math.sqrt(P * rng.uniform(0.2, 1.0) / total)
    return NetworkState(H, C, [scale * w for w in W])


def ball_sample(rng, template: dict, P: float) -> dict:
    """Random beamformers with total power uniform in ``[0, P]``."""
    W = {k: complex_gaussian(rng, np.shape(v)) for k, v in template.items()}
    total = sum(float(np.vdot(w, w).real) for w in W.values())
    s = math.sqrt(P * rng.uniform() / total)
    return {k: s * w for k, w in W.items()}


# direct metric formulas, written out independently of fbl_metrics


def covariances(state: NetworkState, W: dict, k: int):
    H = state.channels[k]
    S = H @ W[k] @ (H @ W[k]).conj().T
    D = state.noise[k].astype(complex).copy()
    for j in W:
        if j != k:
            G = H @ W[j]
            D = D + G @ G.conj().T
    return S, D


def shannon_direct(state, W, k):
    S, D = covariances(state, W, k)
    return float(np.real(np.log(np.linalg.det(np.eye(len(D)) + np.linalg.solve(D, S)))))


def dispersion_direct(state, W, k):
    S, D = covariances(state, W, k)
    return float(2.0 * np.real(np.trace(S @ np.linalg.inv(D + S))))


def fbl_direct(state, W, k, eps, n):
    return shannon_direct(state, W, k) - qfunc_inv_oracle(eps) * math.sqrt(dispersion_direct(state, W, k) / n)


def mse_direct(state, W, k, mode="literal"):
    S, D = covariances(state, W, k)
    O = D if mode == "literal" else D + S
    return float(np.real(np.trace(np.eye(len(D)) - np.linalg.solve(O, S))))


def sinr_direct(state, W, k):
    h = state.channels[k]
    sigma2 = float(np.real(np.trace(state.noise[k]))) / state.noise[k].shape[0]
    sig = float(np.linalg.norm(h @ W[k]) ** 2)
    intf = sum(float(np.linalg.norm(h @ W[j]) ** 2) for j in W if j != k)
    return sig / (sigma2 + intf)
