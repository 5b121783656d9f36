"""Dense complex linear algebra used by every other module.

All matrices are plain ``numpy`` arrays.  Hermitian positive-definite
inputs go through a single Cholesky gate; failures raise
:class:`NotPositiveDefinite` and it is up to the caller to regularize.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, NotPositiveDefinite

PIVOT_TOL = 1e-14
HERMITIAN_RTOL = 1e-12

# Type aliases, documentation only.
ComplexMatrix = np.ndarray
HermitianMatrix = np.ndarray


def hermitian(M: np.ndarray) -> np.ndarray:
    """Return ``(M + M^H)/2`` after checking M is Hermitian to 1e-12 relative."""
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected square matrix, got {M.shape}")
    scale = max(np.abs(M).max(), 1.0)
    if np.abs(M - M.conj().T).max() > HERMITIAN_RTOL * scale:
        raise ValueError("matrix is not Hermitian")
    return 0.5 * (M + M.conj().T)


def herm(M: np.ndarray) -> np.ndarray:
    """Symmetrize without checking."""
    return 0.5 * (M + M.conj().T)


def cholesky_pd(M: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a Hermitian PD matrix.

    A pivot (squared diagonal of the factor) at or below ``1e-14`` times the
    largest diagonal entry of ``M`` is treated as a failure.
    """
    M = np.atleast_2d(np.asarray(M))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected square matrix, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = np.abs(np.real(np.diag(M))).max()
    if scale <= 0:
        raise NotPositiveDefinite("zero diagonal")
    try:
        L = np.linalg.cholesky(herm(M))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = np.real(np.diag(L)) ** 2
    if np.any(pivots <= PIVOT_TOL * scale):
        raise NotPositiveDefinite(f"pivot {pivots.min():.3e} below tolerance")
    return L


def logdet_pd(M: np.ndarray) -> float:
    """Natural log-determinant of a Hermitian PD matrix."""
    L = cholesky_pd(M)
    return float(2.0 * np.sum(np.log(np.real(np.diag(L)))))


def solve_pd(M: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``M X = B`` for Hermitian PD ``M``."""
    L = cholesky_pd(M)
    B = np.asarray(B)
    squeeze = B.ndim == 1
    B2 = B.reshape(-1, 1) if squeeze else B
    if B2.shape[0] != L.shape[0]:
        raise DimensionMismatch(f"cannot solve {L.shape} system with rhs {B.shape}")
    X = sla.cho_solve((L, True), B2)
    return X.ravel() if squeeze else X


def inv_pd(M: np.ndarray) -> np.ndarray:
    M = np.atleast_2d(M)
    return herm(solve_pd(M, np.eye(M.shape[0])))


def rng_for(seed, *stream) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *stream)``.

    Philox streams derived from distinct keys are independent, so trial ``i``
    draws the same numbers whether it runs first, last or in another process.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    ss = np.random.SeedSequence([int(s) for s in (seed, *stream)])
    return np.random.Generator(np.random.Philox(ss))


def random_complex_gaussian(rows: int, cols: int, seed=0) -> np.ndarray:
    """I.i.d. CN(0, 1) entries: real and imaginary parts each of variance 1/2."""
    if rows < 1 or cols < 1:
        raise DimensionMismatch("dimensions must be >= 1")
    rng = rng_for(seed)
    return complex_gaussian(rng, (rows, cols))


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


def random_pd(dim: int, rng: np.random.Generator, eps: float = 1e-9) -> np.ndarray:
    """``X X^H + eps I`` for a square complex Gaussian ``X``."""
    X = complex_gaussian(rng, (dim, dim))
    return X @ X.conj().T + eps * np.eye(dim)
