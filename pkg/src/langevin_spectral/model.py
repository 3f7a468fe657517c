"""Physical model and the weighted Fourier / Hermite tensor basis.

Positions live on the torus [0, 2pi), momenta on the real line, mass is 1.
The potential is a trigonometric polynomial

    V(q) = v0 + sum_n v_cos[n-1] cos(n q) + v_sin[n-1] sin(n q)

The position basis G_k is orthonormal in L^2(nu), nu ~ exp(-beta V), and
the momentum basis H_l is orthonormal in L^2(kappa), kappa = N(0, 1/beta).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

DEFAULT_N_QUAD_Q = 1024


@dataclass(frozen=True)
class ModelParams:
    """Physical and discretization parameters.

    ``K`` is the half Fourier-mode count (2K-1 position modes), ``L`` the
    number of Hermite modes.  ``n_quad_q`` defaults to the larger of 1024
    and ``8 * (K + degree)``.
    """

    beta: float = 1.0
    gamma: float = 1.0
    v0: float = 1.0
    v_cos: tuple[float, ...] = (-1.0,)
    v_sin: tuple[float, ...] = ()
    K: int = 10
    L: int = 40
    n_quad_q: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "v_cos", tuple(float(a) for a in self.v_cos))
        object.__setattr__(self, "v_sin", tuple(float(b) for b in self.v_sin))
        if self.n_quad_q is None:
            object.__setattr__(
                self, "n_quad_q", max(DEFAULT_N_QUAD_Q, 8 * (self.K + self.degree))
            )
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.L < 2:
            raise ValueError(f"L must be >= 2, got {self.L}")
        if self.n_quad_q < 8 * (self.K + self.degree):
            raise ValueError(
                f"n_quad_q={self.n_quad_q} too small for K={self.K}, "
                f"degree={self.degree} (need >= {8 * (self.K + self.degree)})"
            )

    @classmethod
    def flat(cls, **kw) -> "ModelParams":
        """V = 0."""
        return cls(v0=0.0, v_cos=(), v_sin=(), **kw)

    @property
    def degree(self) -> int:
        d = max(len(self.v_cos), len(self.v_sin))
        # trailing zeros do not count
        while d > 0 and _coef(self.v_cos, d) == 0.0 and _coef(self.v_sin, d) == 0.0:
            d -= 1
        return d

    @property
    def n_modes_q(self) -> int:
        return 2 * self.K - 1

    @property
    def size(self) -> int:
        return (2 * self.K - 1) * self.L

    @property
    def is_flat(self) -> bool:
        return self.degree == 0

    @property
    def is_even(self) -> bool:
        return all(b == 0.0 for b in self.v_sin)

    def with_sizes(self, K: int | None = None, L: int | None = None) -> "ModelParams":
        """Copy with new basis sizes; the quadrature size is re-derived."""
        K = self.K if K is None else K
        L = self.L if L is None else L
        n_quad = max(self.n_quad_q, 8 * (K + self.degree))
        return replace(self, K=K, L=L, n_quad_q=n_quad)

    def potential_key(self) -> dict:
        return {"v0": self.v0, "v_cos": list(self.v_cos), "v_sin": list(self.v_sin)}


def _coef(seq, n):
    return seq[n - 1] if 0 < n <= len(seq) else 0.0


@dataclass
class CoefficientVector:
    """Coefficients of a function of (q, p) on the G_k H_l basis.

    Storage follows the hashing zeta(k, l) = k + (2K-1) l, so ``as_matrix``
    returns an (L, 2K-1) view with rows indexed by the Hermite mode.
    """

    K: int
    L: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != ((2 * self.K - 1) * self.L,):
            raise ValueError(
                f"expected {(2 * self.K - 1) * self.L} coefficients for "
                f"(K, L)=({self.K}, {self.L}), got shape {self.coeffs.shape}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.K, self.L)

    def as_matrix(self) -> np.ndarray:
        return self.coeffs.reshape(self.L, 2 * self.K - 1)

    def norm(self) -> float:
        """L^2(mu) norm (the basis is orthonormal)."""
        return float(np.linalg.norm(self.coeffs))

    def dot(self, other: "CoefficientVector") -> float:
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return float(self.coeffs @ other.coeffs)

    @classmethod
    def zeros(cls, K: int, L: int) -> "CoefficientVector":
        return cls(K, L, np.zeros((2 * K - 1) * L))


def zeta(k, l, K: int):
    """Hash (k, l) -> k + (2K-1) l."""
    n = 2 * K - 1
    k = np.asarray(k)
    l = np.asarray(l)
    if np.any((k < 0) | (k >= n) | (l < 0)):
        raise IndexError(f"mode index out of range for K={K}")
    return k + n * l


def zeta_inverse(i, K: int):
    n = 2 * K - 1
    i = np.asarray(i)
    return i % n, i // n


# --- potential ---------------------------------------------------------------

def eval_potential(params: ModelParams, q):
    q = np.asarray(q, dtype=float)
    v = np.full_like(q, params.v0)
    for n, a in enumerate(params.v_cos, start=1):
        v = v + a * np.cos(n * q)
    for n, b in enumerate(params.v_sin, start=1):
        v = v + b * np.sin(n * q)
    return v


def eval_potential_derivative(params: ModelParams, q):
    q = np.asarray(q, dtype=float)
    dv = np.zeros_like(q)
    for n, a in enumerate(params.v_cos, start=1):
        dv = dv - n * a * np.sin(n * q)
    for n, b in enumerate(params.v_sin, start=1):
        dv = dv + n * b * np.cos(n * q)
    return dv


# --- quadrature ----------------------------------------------------------------

def torus_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Periodic trapezoid nodes and weights for integrals over [0, 2pi)."""
    q = 2.0 * np.pi * np.arange(n) / n
    return q, np.full(n, 2.0 * np.pi / n)


def gauss_hermite_kappa(n: int, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights integrating against kappa = N(0, 1/beta)."""
    y, w = hermegauss(n)
    return y / np.sqrt(beta), w / np.sqrt(2.0 * np.pi)


def partition_function_nu(params: ModelParams) -> float:
    """Z = int_0^{2pi} exp(-beta V(q)) dq."""
    q, w = torus_nodes(params.n_quad_q)
    return float(w @ np.exp(-params.beta * eval_potential(params, q)))


# --- position basis ----------------------------------------------------------

def _flat_mode(k: int, q):
    """Orthonormal Fourier mode on L^2(dq), same index convention as G_k."""
    if k == 0:
        return np.full_like(q, 1.0 / np.sqrt(2.0 * np.pi))
    m = (k + 1) // 2
    if k % 2 == 0:
        return np.cos(m * q) / np.sqrt(np.pi)
    return np.sin(m * q) / np.sqrt(np.pi)


def _flat_mode_derivative(k: int, q):
    if k == 0:
        return np.zeros_like(q)
    m = (k + 1) // 2
    if k % 2 == 0:
        return -m * np.sin(m * q) / np.sqrt(np.pi)
    return m * np.cos(m * q) / np.sqrt(np.pi)


def eval_G(k: int, q, params: ModelParams, Z: float | None = None):
    """G_k(q): k = 0 constant mode, k = 2m cosine, k = 2m-1 sine."""
    if k < 0:
        raise ValueError("mode index must be non-negative")
    q = np.asarray(q, dtype=float)
    Z = partition_function_nu(params) if Z is None else Z
    weight = np.exp(0.5 * params.beta * eval_potential(params, q))
    return np.sqrt(Z) * _flat_mode(k, q) * weight


def eval_G_derivative(k: int, q, params: ModelParams, Z: float | None = None):
    """Analytic d/dq G_k(q)."""
    q = np.asarray(q, dtype=float)
    Z = partition_function_nu(params) if Z is None else Z
    weight = np.exp(0.5 * params.beta * eval_potential(params, q))
    dv = eval_potential_derivative(params, q)
    return np.sqrt(Z) * weight * (
        _flat_mode_derivative(k, q) + 0.5 * params.beta * dv * _flat_mode(k, q)
    )


def _half_weight_exponential(params: ModelParams, m_max: int) -> np.ndarray:
    """Coefficients c_m of exp(-beta V / 2) on e^{imq}, |m| <= m_max.

    f = exp(-beta V/2) solves f' = -(beta/2) V' f, i.e. the banded recurrence
    i m c_m + (beta/2) sum_s w_s c_{m-s} = 0.  Solving it on a window much
    wider than needed with zero far field picks the decaying (minimal)
    solution, so tiny high modes keep their relative accuracy; quadrature
    only resolves them to absolute rounding.  c_0 is fixed by quadrature.
    """
    d = params.degree
    q, w = torus_nodes(params.n_quad_q)
    f = np.exp(-0.5 * params.beta * eval_potential(params, q))
    c0 = (w @ f) / (2.0 * np.pi)
    if d == 0:
        c = np.zeros(2 * m_max + 1, dtype=complex)
        c[m_max] = c0
        return c
    M = m_max + 40 + 2 * d
    wv = np.zeros(2 * d + 1, dtype=complex)
    for n in range(1, d + 1):
        a, b = _coef(params.v_cos, n), _coef(params.v_sin, n)
        wv[d + n] = (-n * a) / 2j + n * b / 2.0
        wv[d - n] = (n * a) / 2j + n * b / 2.0
    size = 2 * M + 1
    A = np.zeros((size, size), dtype=complex)
    rhs = np.zeros(size, dtype=complex)
    for i, m in enumerate(range(-M, M + 1)):
        if m == 0:
            A[i, i] = 1.0
            rhs[i] = c0
            continue
        A[i, i] += 1j * m
        for s in range(-d, d + 1):
            j = i - s
            if 0 <= j < size:
                A[i, j] += 0.5 * params.beta * wv[d + s]
    c = np.linalg.solve(A, rhs)
    return c[M - m_max : M + m_max + 1]


def fourier_coefficients_of_one(params: ModelParams, K: int | None = None,
                                method: str = "recurrence") -> np.ndarray:
    """g_j = <1, G_j>_nu for j < 2K-1 (K defaults to ``params.K``).

    ``recurrence`` (default) keeps relative accuracy in the far tail;
    ``quadrature`` is the plain trapezoid route, kept as a cross-check.
    """
    K = params.K if K is None else K
    n = 2 * K - 1
    Z = partition_function_nu(params)
    if method == "recurrence":
        m_max = K - 1
        c = _half_weight_exponential(params, m_max)
        g = np.empty(n)
        g[0] = np.sqrt(2.0 * np.pi) * c[m_max].real
        for j in range(1, n):
            m = (j + 1) // 2
            cp, cm = c[m_max + m], c[m_max - m]
            # <F_j, f> over [0, 2pi): cos -> sqrt(pi)(c_m + c_-m), sin -> i sqrt(pi)(c_m - c_-m)
            g[j] = np.sqrt(np.pi) * ((cp + cm).real if j % 2 == 0 else (1j * (cp - cm)).real)
        g /= np.sqrt(Z)
    elif method == "quadrature":
        n_quad = max(params.n_quad_q, 8 * (K + params.degree))
        q, w = torus_nodes(n_quad)
        # G_j dnu = Z^{-1/2} F_j exp(-beta V / 2) dq
        half = np.exp(-0.5 * params.beta * eval_potential(params, q)) * w / np.sqrt(Z)
        g = np.array([half @ _flat_mode(j, q) for j in range(n)])
    else:
        raise ValueError(f"unknown method {method!r}")
    if params.is_even:
        g[1::2] = 0.0
    return g


# --- momentum basis ----------------------------------------------------------

def eval_H(l: int, p, beta: float):
    """Normalized Hermite function H_l(p) = He_l(sqrt(beta) p) / sqrt(l!)."""
    return eval_H_all(l, p, beta)[l]


def eval_H_all(l_max: int, p, beta: float) -> np.ndarray:
    """Rows H_0..H_{l_max} by the normalized three-term recurrence."""
    if l_max < 0:
        raise ValueError("mode index must be non-negative")
    y = np.sqrt(beta) * np.asarray(p, dtype=float)
    out = np.empty((l_max + 1,) + y.shape)
    out[0] = 1.0
    if l_max >= 1:
        out[1] = y
    for l in range(1, l_max):
        out[l + 1] = (y * out[l] - np.sqrt(l) * out[l - 1]) / np.sqrt(l + 1)
    return out


def eval_H_derivative_all(l_max: int, p, beta: float) -> np.ndarray:
    """d/dp of every H_l, by differentiating the recurrence itself."""
    h = eval_H_all(l_max, p, beta)
    y = np.sqrt(beta) * np.asarray(p, dtype=float)
    sb = np.sqrt(beta)
    out = np.zeros_like(h)
    if l_max >= 1:
        out[1] = sb
    for l in range(1, l_max):
        out[l + 1] = (sb * h[l] + y * out[l] - np.sqrt(l) * out[l - 1]) / np.sqrt(l + 1)
    return out


# --- inner products ----------------------------------------------------------

def inner_product_nu(f, g, params: ModelParams) -> float:
    """<f, g> in L^2(nu) for callables of q (trapezoid on the torus)."""
    q, w = torus_nodes(params.n_quad_q)
    rho = np.exp(-params.beta * eval_potential(params, q))
    rho /= w @ rho
    vals = np.asarray(f(q), dtype=float) * np.asarray(g(q), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite integrand value at a quadrature node")
    return float((w * rho) @ vals)


def inner_product_kappa(f, g, beta: float, n_nodes: int = 128) -> float:
    """<f, g> in L^2(kappa) for callables of p (Gauss-Hermite)."""
    p, w = gauss_hermite_kappa(n_nodes, beta)
    vals = np.asarray(f(p), dtype=float) * np.asarray(g(p), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite integrand value at a quadrature node")
    return float(w @ vals)
