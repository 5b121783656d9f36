"""Touching bounds used to build convex surrogates.

Each builder takes an expansion point and returns the bound as a structured
object (:class:`QuadraticFunctional` or :class:`AffineFunctional`) rather
than a closure, so callers can read coefficients and curvature off it.

A :class:`QuadraticFunctional` over named matrix variables ``X_key`` is

    constant
    + sum_key 2 Re Tr(C_key^H X_key)
    + sum_terms sign * Tr(L X_key R X_key^H)

with ``L`` and ``R`` Hermitian PSD.  One-dimensional variables are treated
as column vectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np

from .errors import NonPositiveDenominator, NonPositiveInput
from .matrix_core import herm, inv_pd, logdet_pd, solve_pd

SQRT_FLOOR = 1e-8


def as_column(X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim == 0:
        return X.reshape(1, 1)
    if X.ndim == 1:
        return X.reshape(-1, 1)
    return X


@dataclass(frozen=True)
class QuadTerm:
    key: Hashable
    left: np.ndarray
    right: np.ndarray
    sign: int = 1

    def value(self, X) -> float:
        X = as_column(X)
        return self.sign * float(np.real(np.trace(self.left @ X @ self.right @ X.conj().T)))


@dataclass
class QuadraticFunctional:
    constant: float = 0.0
    linear: dict = field(default_factory=dict)
    quadratic: list = field(default_factory=list)

    def __call__(self, variables: Mapping) -> float:
        val = float(self.constant)
        for key, C in self.linear.items():
            X = as_column(variables[key])
            val += 2.0 * float(np.real(np.vdot(C, X)))
        for term in self.quadratic:
            val += term.value(variables[term.key])
        return val

    @property
    def keys(self) -> set:
        return set(self.linear) | {t.key for t in self.quadratic}

    @property
    def curvature(self) -> str:
        signs = {t.sign for t in self.quadratic}
        if not signs:
            return "affine"
        if signs == {1}:
            return "convex"
        if signs == {-1}:
            return "concave"
        return "indefinite"

    def add_linear(self, key, coef) -> None:
        coef = as_column(coef)
        if key in self.linear:
            self.linear[key] = self.linear[key] + coef
        else:
            self.linear[key] = coef.astype(np.result_type(coef, float))

    def add_quadratic(self, key, left, right=None, sign: int = 1) -> None:
        left = np.atleast_2d(left)
        if right is None:
            right = np.eye(1)
        self.quadratic.append(QuadTerm(key, left, np.atleast_2d(right), sign))

    def scaled(self, s: float) -> "QuadraticFunctional":
        s = float(s)
        out = QuadraticFunctional(s * self.constant, {k: s * v for k, v in self.linear.items()})
        for t in self.quadratic:
            if s == 0:
                continue
            sign = t.sign if s > 0 else -t.sign
            out.quadratic.append(QuadTerm(t.key, abs(s) * t.left, t.right, sign))
        return out

    def __mul__(self, s):
        return self.scaled(s)

    __rmul__ = __mul__

    def __neg__(self):
        return self.scaled(-1.0)

    def __add__(self, other):
        if isinstance(other, (int, float, np.floating)):
            out = self.scaled(1.0)
            out.constant += float(other)
            return out
        out = self.scaled(1.0)
        out.constant += other.constant
        for k, v in other.linear.items():
            out.add_linear(k, v)
        out.quadratic.extend(other.quadratic)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other if not isinstance(other, (int, float)) else -float(other))


@dataclass(frozen=True)
class AffineFunctional:
    """``constant + slopes . x`` over a real vector."""

    constant: float
    slopes: np.ndarray

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.constant + np.dot(self.slopes, x.reshape(self.slopes.shape)))


def logdet_lb(gamma_bar, omega_bar) -> QuadraticFunctional:
    """Concave minorant of ``ln|I + Omega^{-1} Gamma Gamma^H|`` in ``(gamma, omega)``.

    The minorant is

        ln|I + Ob^{-1} Gb Gb^H| - Tr(Ob^{-1} Gb Gb^H) + 2 Re Tr(Ob^{-1} Gb Gamma^H)
        - Tr(K (Gamma Gamma^H + Omega)),   K = Ob^{-1} - (Gb Gb^H + Ob)^{-1}.
    """
    G = as_column(np.asarray(gamma_bar, dtype=complex))
    O = np.atleast_2d(np.asarray(omega_bar, dtype=complex))
    Oinv = inv_pd(O)
    GG = G @ G.conj().T
    K = herm(Oinv - inv_pd(GG + O))
    A = Oinv @ G
    const = logdet_pd(O + GG) - logdet_pd(O) - float(np.real(np.trace(Oinv @ GG)))
    out = QuadraticFunctional(const)
    out.add_linear("gamma", A)
    out.add_quadratic("gamma", K, np.eye(G.shape[1]), -1)
    out.add_linear("omega", -0.5 * K)
    return out


def logdet_value(gamma, omega) -> float:
    G = as_column(np.asarray(gamma, dtype=complex))
    O = np.atleast_2d(omega)
    return logdet_pd(O + G @ G.conj().T) - logdet_pd(O)


def trace_ratio_lb(gamma_bar, omega_bar) -> QuadraticFunctional:
    """Affine minorant of ``Tr(Omega^{-1} Gamma Gamma^H)`` (jointly convex)."""
    G = as_column(np.asarray(gamma_bar, dtype=complex))
    O = np.atleast_2d(np.asarray(omega_bar, dtype=complex))
    A = solve_pd(O, G)
    M = herm(A @ A.conj().T)
    out = QuadraticFunctional(0.0)
    out.add_linear("gamma", A)
    out.add_linear("omega", -0.5 * M)
    return out


def trace_ratio_value(gamma, omega) -> float:
    G = as_column(np.asarray(gamma, dtype=complex))
    return float(np.real(np.trace(solve_pd(np.atleast_2d(omega), G @ G.conj().T))))


def gm_upper_bound(x_bar) -> AffineFunctional:
    """Tangent plane of the (concave) geometric mean at ``x_bar``."""
    x_bar = np.asarray(x_bar, dtype=float).ravel()
    K = x_bar.size
    if K < 2:
        raise ValueError("geometric-mean bound needs K > 1")
    if np.any(x_bar <= 0):
        raise NonPositiveInput("expansion point must be strictly positive")
    gm = float(np.exp(np.mean(np.log(x_bar))))
    slopes = gm / (K * x_bar)
    return AffineFunctional(gm - float(slopes @ x_bar), slopes)


def prod_square_lb(x_bar) -> AffineFunctional:
    """Tangent plane of ``prod_k x_k^2`` at ``x_bar`` (a minorant on x >= 0)."""
    x_bar = np.asarray(x_bar, dtype=float).ravel()
    K = x_bar.size
    sq = x_bar**2
    slopes = np.empty(K)
    for k in range(K):
        slopes[k] = 2.0 * x_bar[k] * np.prod(np.delete(sq, k))
    prod = float(np.prod(sq))
    return AffineFunctional(prod - float(slopes @ x_bar), slopes)


def sum_abs_sq_lb(x_bar) -> QuadraticFunctional:
    """Affine minorant of ``sum_k |x_k|^2`` on key ``"x"``."""
    xb = as_column(np.asarray(x_bar, dtype=complex))
    out = QuadraticFunctional(-float(np.real(np.vdot(xb, xb))))
    out.add_linear("x", xb)
    return out


def ratio_quadratic_lb(x_bar, y_bar) -> QuadraticFunctional:
    """Affine minorant of ``|x|^2 / y`` in ``(x, y)`` for ``y > 0``; keys ``"x"``, ``"y"``."""
    y_bar = float(y_bar)
    if y_bar <= 0:
        raise NonPositiveDenominator("y_bar must be positive")
    xb = as_column(np.asarray(x_bar, dtype=complex))
    out = QuadraticFunctional(0.0)
    out.add_linear("x", xb / y_bar)
    out.add_linear("y", np.array([[-0.5 * float(np.real(np.vdot(xb, xb))) / y_bar**2]]))
    return out


def tangent_sqrt_ub(x_bar: float) -> AffineFunctional:
    """Tangent of ``sqrt`` at ``max(x_bar, 1e-8)``; majorizes ``sqrt(x)`` for x >= 0."""
    xb = max(float(x_bar), SQRT_FLOOR)
    s = np.sqrt(xb)
    slope = 0.5 / s
    return AffineFunctional(s - slope * xb, np.array([slope]))
