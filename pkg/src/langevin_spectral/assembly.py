"""Galerkin matrices on the tensor basis G_k H_l.

Q_{k,k'} = <G_k, d_q G_k'>_nu,  P_{l,l'} = <H_l, d_p H_l'>_kappa,  N = diag(l),
and the rigidity matrix

    Lmat[(k,l), (k',l')] = -Q_{k,k'} P_{l',l} / beta + Q_{k',k} P_{l,l'} / beta
                           + gamma delta_{kk'} l delta_{ll'}

which represents -<e_i, L e_j> for the Langevin generator L.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import (
    CoefficientVector,
    ModelParams,
    eval_G,
    eval_G_derivative,
    eval_potential,
    fourier_coefficients_of_one,
    partition_function_nu,
    torus_nodes,
    zeta,
    zeta_inverse,
)

# drop rounding noise from the exponential-basis products
_PRUNE = 1e-14


def _flat_to_exponential(n_modes: int, m_max: int) -> np.ndarray:
    """Columns: flat orthonormal modes F_k written on e^{imq}, m in [-m_max, m_max]."""
    T = np.zeros((2 * m_max + 1, n_modes), dtype=complex)
    c = 1.0 / (2.0 * np.sqrt(np.pi))
    T[m_max, 0] = 1.0 / np.sqrt(2.0 * np.pi)
    for k in range(1, n_modes):
        m = (k + 1) // 2
        if k % 2 == 0:
            T[m_max + m, k] = c
            T[m_max - m, k] = c
        else:
            T[m_max + m, k] = -1j * c
            T[m_max - m, k] = 1j * c
    return T


def _potential_derivative_exponential(params: ModelParams) -> np.ndarray:
    """Coefficients of V' on e^{imq}, m in [-d, d]."""
    d = params.degree
    w = np.zeros(2 * d + 1, dtype=complex)
    for n in range(1, d + 1):
        a = params.v_cos[n - 1] if n <= len(params.v_cos) else 0.0
        b = params.v_sin[n - 1] if n <= len(params.v_sin) else 0.0
        # -n a sin(nq) + n b cos(nq)
        w[d + n] += (-n * a) / 2j + n * b / 2.0
        w[d - n] += -(-n * a) / 2j + n * b / 2.0
    return w


def build_Q(params: ModelParams, method: str = "analytic", K: int | None = None) -> sp.csr_matrix:
    """Position derivative matrix on 2K-1 weighted Fourier modes.

    ``analytic`` is exact for trigonometric potentials (product-to-sum on
    exponentials).  ``quadrature`` integrates <G_k, d_q G_k'>_nu on the
    torus nodes and serves as the independent cross-check.
    """
    K = params.K if K is None else K
    n = 2 * K - 1
    if method == "analytic":
        d = params.degree
        m_max = K - 1 + d
        T = _flat_to_exponential(n, m_max)
        freqs = np.arange(-m_max, m_max + 1)
        deriv = 1j * freqs[:, None] * T
        w = _potential_derivative_exponential(params)
        mult = np.zeros_like(T)
        for s, ws in zip(range(-d, d + 1), w):
            if ws == 0:
                continue
            # (V' f)_m = sum_s w_s f_{m-s}
            if s >= 0:
                mult[s:] += ws * T[: len(T) - s]
            else:
                mult[:s] += ws * T[-s:]
        image = deriv + 0.5 * params.beta * mult
        Qd = 2.0 * np.pi * (T.conj().T @ image).real
        scale = max(1.0, np.abs(Qd).max())
        Qd[np.abs(Qd) < _PRUNE * scale] = 0.0
    elif method == "quadrature":
        sub = params.with_sizes(K=K)
        q, w = torus_nodes(sub.n_quad_q)
        Z = partition_function_nu(sub)
        rho = w * np.exp(-sub.beta * eval_potential(sub, q)) / Z
        G = np.array([eval_G(k, q, sub, Z) for k in range(n)])
        dG = np.array([eval_G_derivative(k, q, sub, Z) for k in range(n)])
        Qd = (G * rho) @ dG.T
    else:
        raise ValueError(f"unknown method {method!r}")
    return sp.csr_matrix(Qd)


def build_P(L: int, beta: float) -> sp.csr_matrix:
    """P_{l,l'} = sqrt(beta l') delta_{l, l'-1}."""
    if L < 2:
        raise ValueError("L must be >= 2")
    lp = np.arange(1, L)
    return sp.csr_matrix((np.sqrt(beta * lp), (lp - 1, lp)), shape=(L, L))


def build_N(L: int) -> sp.dia_matrix:
    return sp.diags(np.arange(L, dtype=float), 0, format="dia")


def rigidity_triplets(Q: sp.spmatrix, P: sp.spmatrix, gamma: float, beta: float):
    """(rows, cols, vals) of the rigidity matrix, duplicates not yet summed."""
    n = Q.shape[0]
    L = P.shape[0]
    Qc = Q.tocoo()
    Pc = P.tocoo()
    kq, kq2, vq = Qc.row, Qc.col, Qc.data
    lp, lp2, vp = Pc.row, Pc.col, Pc.data

    # -Q_{k,k'} P_{l',l}: P entry (l', l) = (lp, lp2)  -> row (k, lp2), col (k', lp)
    r1 = (kq[:, None] + n * lp2[None, :]).ravel()
    c1 = (kq2[:, None] + n * lp[None, :]).ravel()
    v1 = (-vq[:, None] * vp[None, :] / beta).ravel()
    # +Q_{k',k} P_{l,l'}: Q entry (k', k) = (kq, kq2), P entry (l, l') = (lp, lp2)
    r2 = (kq2[:, None] + n * lp[None, :]).ravel()
    c2 = (kq[:, None] + n * lp2[None, :]).ravel()
    v2 = (vq[:, None] * vp[None, :] / beta).ravel()
    idx = np.arange(n * L)
    _, ell = zeta_inverse(idx, (n + 1) // 2)
    mask = ell > 0
    r3, c3, v3 = idx[mask], idx[mask], gamma * ell[mask].astype(float)
    return (
        np.concatenate([r1, r2, r3]),
        np.concatenate([c1, c2, c3]),
        np.concatenate([v1, v2, v3]),
    )


def build_rigidity(params: ModelParams, Q: sp.spmatrix | None = None,
                   P: sp.spmatrix | None = None) -> sp.csr_matrix:
    """Rigidity matrix of size (2K-1) L, compressed rows."""
    size = params.size
    if size >= np.iinfo(np.int32).max:
        raise OverflowError(f"basis size {size} overflows the index hash")
    Q = build_Q(params) if Q is None else Q
    P = build_P(params.L, params.beta) if P is None else P
    r, c, v = rigidity_triplets(Q, P, params.gamma, params.beta)
    A = sp.coo_matrix((v, (r, c)), shape=(size, size)).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def build_U(params: ModelParams, g: np.ndarray | None = None) -> np.ndarray:
    """Coefficients of u = Pi 1 / ||Pi 1||, supported on Hermite mode 0."""
    g = fourier_coefficients_of_one(params) if g is None else g
    norm = np.linalg.norm(g)
    assert norm > 0, "projection of 1 vanished"
    U = np.zeros(params.size)
    U[: params.n_modes_q] = g / norm
    return U


def build_augmented(Lmat: sp.spmatrix, U: np.ndarray) -> sp.csc_matrix:
    """Bordered matrix [[Lmat, U], [U^T, 0]]."""
    n = Lmat.shape[0]
    if U.shape != (n,):
        raise ValueError(f"U has shape {U.shape}, expected ({n},)")
    col = sp.csc_matrix(U.reshape(-1, 1))
    col.eliminate_zeros()
    A = sp.bmat([[Lmat, col], [col.T, None]], format="csc")
    A.sort_indices()
    return A


def observable_velocity(params: ModelParams, g: np.ndarray | None = None) -> CoefficientVector:
    """R(q, p) = p = beta^{-1/2} H_1(p), times 1 expanded in G_k."""
    g = fourier_coefficients_of_one(params) if g is None else g
    Y = CoefficientVector.zeros(params.K, params.L)
    Y.as_matrix()[1, :] = g / np.sqrt(params.beta)
    return Y


def observable_sobolev(params: ModelParams) -> CoefficientVector:
    """r_{kl} = max(1,k)^{-5/2} max(1,l)^{-3/2}: in H^1 but not H^2."""
    k = np.maximum(1, np.arange(params.n_modes_q)).astype(float)
    l = np.maximum(1, np.arange(params.L)).astype(float)
    return CoefficientVector(params.K, params.L, np.outer(l ** -1.5, k ** -2.5).ravel())


OBSERVABLES = {
    "velocity": observable_velocity,
    "sobolev": lambda params, g=None: observable_sobolev(params),
}


@dataclass
class GalerkinSystem:
    """Assembled operators for one (params, K, L)."""

    params: ModelParams
    Q: sp.csr_matrix
    P: sp.csr_matrix
    N: sp.dia_matrix
    Lmat: sp.csr_matrix
    U: np.ndarray
    g: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def build(cls, params: ModelParams, q_method: str = "analytic") -> "GalerkinSystem":
        Q = build_Q(params, method=q_method)
        P = build_P(params.L, params.beta)
        g = fourier_coefficients_of_one(params)
        return cls(
            params=params,
            Q=Q,
            P=P,
            N=build_N(params.L),
            Lmat=build_rigidity(params, Q, P),
            U=build_U(params, g),
            g=g,
        )

    @property
    def size(self) -> int:
        return self.params.size

    def zeta(self, k, l):
        return zeta(k, l, self.params.K)

    def zeta_inverse(self, i):
        return zeta_inverse(i, self.params.K)

    def augmented(self) -> sp.csc_matrix:
        if "augmented" not in self._cache:
            self._cache["augmented"] = build_augmented(self.Lmat, self.U)
        return self._cache["augmented"]

    def factorization(self):
        """LU factors of the augmented matrix, computed once per system."""
        if "lu" not in self._cache:
            from .sparse import lu_factorize

            self._cache["lu"] = lu_factorize(self.augmented())
        return self._cache["lu"]

    def observable(self, name: str) -> CoefficientVector:
        try:
            builder = OBSERVABLES[name]
        except KeyError:
            raise ValueError(f"unknown observable {name!r}") from None
        return builder(self.params, self.g)
