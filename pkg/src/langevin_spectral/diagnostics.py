"""Hypocoercivity certificates and the spectral gap of the rigidity matrix.

Most quantities here are norms of operators restricted to the Galerkin
space and measured on a larger ("extended") truncated basis.  Matrix
entries of the generator between basis functions do not depend on the
truncation, so an extension that contains every image mode gives exact
off-block norms; norms involving (1 - L_ovd)^{-1} are themselves truncated
and come with a convergence check.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import build_P, build_Q, build_rigidity
from .model import ModelParams, fourier_coefficients_of_one
from .sparse import ConvergenceWarning, dense_eigenvalues, eigs_shift_invert, operator_norm_estimate

log = logging.getLogger(__name__)

DENSE_GAP_MAX = 2000
EXT_RTOL = 1e-3


class DiagnosticsError(RuntimeError):
    pass


def default_epsilon(gamma: float, eps_bar: float = 0.1) -> float:
    return eps_bar * min(gamma, 1.0 / gamma)


# --- tail of 1 -----------------------------------------------------------------

def tail_mass_one(params: ModelParams, K: int) -> float:
    """||(1 - Pi_K^q) 1||, summing the dropped coefficients of 1 directly."""
    if K < 0:
        raise ValueError("K must be non-negative")
    if K == 0:
        return 1.0
    g = fourier_coefficients_of_one(params, K=K + 16)
    return float(np.linalg.norm(g[2 * K - 1 :]))


def norm_L_uK(params: ModelParams, K: int | None = None) -> dict:
    """||L u_K|| with u_K = Pi_K 1 / ||Pi_K 1||, and its a priori bound.

    L u_K = beta^{-1} d_p^* d_q u_K and d_p^* H_0 = sqrt(beta) H_1, so
    ``computed`` is ||d_q Pi_K 1|| / (sqrt(beta) ||Pi_K 1||), where
    d_q Pi_K 1 = -d_q (1 - Pi_K) 1 is evaluated from the tail of 1 through Q
    to avoid cancellation.  ``closed_form`` is the expression through
    the four boundary coefficients of 1; both agree at beta = 1.
    """
    K = params.K if K is None else K
    b = params.beta
    K_big = K + 16
    g = fourier_coefficients_of_one(params, K=K_big)
    Q = build_Q(params, K=K_big + params.degree).toarray()
    n = 2 * K - 1
    dq_head = -Q[:, n : len(g)] @ g[n:]
    computed = float(np.linalg.norm(dq_head) / (np.sqrt(b) * np.linalg.norm(g[:n])))
    head = np.linalg.norm(g[: 2 * K - 1])
    boundary = sum(g[j] ** 2 for j in (2 * K, 2 * K - 1, 2 * K - 2, 2 * K - 3) if j >= 0)
    closed = np.sqrt(b) * np.sqrt(b**2 / 16 * boundary) / head
    t_prev = tail_mass_one(params, K - 1)
    t_here = tail_mass_one(params, K)
    bound = np.sqrt(b**3 / 16 * t_prev**2 / (1.0 - t_here**2))
    return {"computed": computed, "closed_form": float(closed), "bound": float(bound)}


# --- D^{+-} --------------------------------------------------------------------

def apply_Dpm(K: int, beta: float, phi) -> np.ndarray:
    """Pi_K^{q,perp} d_q Pi_K^q for the default potential V = -cos q.

    ``phi`` holds position coefficients (length >= 2K+1); the image lives on
    modes 2K-1 and 2K.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape[0] < 2 * K + 1:
        raise ValueError(f"need at least {2 * K + 1} coefficients, got {phi.shape[0]}")
    out = np.zeros_like(phi)
    if K == 1:
        # G_0 carries the 1/sqrt(2) normalization
        out[1] = beta / (2.0 * np.sqrt(2.0)) * phi[0]
        return out
    out[2 * K - 1] = beta / 4.0 * phi[2 * K - 2]
    out[2 * K] = -beta / 4.0 * phi[2 * K - 3]
    return out


def Dpm_reference_norm(K: int, beta: float, phi) -> float:
    """(beta/4) ||Pi_{K-1}^{q,perp} Pi_K^q phi||, the sharp bound for K >= 2."""
    phi = np.asarray(phi, dtype=float)
    return beta / 4.0 * float(np.linalg.norm(phi[max(0, 2 * K - 3) : 2 * K - 1]))


# --- off-block of the generator -----------------------------------------------

def _in_block(K: int, L: int, K_ext: int, L_ext: int) -> np.ndarray:
    n = 2 * K_ext - 1
    k = np.arange(n * L_ext) % n
    l = np.arange(n * L_ext) // n
    return (k < 2 * K - 1) & (l < L)


def _offblock(params: ModelParams, K_ext: int, L_ext: int) -> sp.csr_matrix:
    """(1 - Pi_KL) L Pi_KL on the extended basis: rows outside, columns inside."""
    K, L = params.K, params.L
    if K_ext < K + params.degree or L_ext < L + 1:
        raise ValueError(
            f"extension ({K_ext}, {L_ext}) clips the image of L; need K_ext >= "
            f"{K + params.degree}, L_ext >= {L + 1}"
        )
    big = build_rigidity(params.with_sizes(K_ext, L_ext))
    inside = _in_block(K, L, K_ext, L_ext)
    cols = np.flatnonzero(inside)
    return (-big[:, cols]).tocsr().multiply(~inside[:, None]).tocsr()


def norm_Lpm(params: ModelParams, K_ext: int | None = None, L_ext: int | None = None) -> dict:
    """||(1 - Pi_KL) L Pi_KL|| and the bound sqrt(L/beta)(K - 1 + beta)."""
    K, L = params.K, params.L
    K_ext = max(2 * K, K + params.degree) if K_ext is None else K_ext
    L_ext = L + 4 if L_ext is None else L_ext
    M = _offblock(params, K_ext, L_ext)
    est = operator_norm_estimate(M)
    if not est.converged:
        warnings.warn("norm_Lpm: power iteration did not converge", ConvergenceWarning, stacklevel=2)
    bound = np.sqrt(L / params.beta) * (K - 1 + params.beta)
    return {"computed": est.value, "bound": float(bound), "K_ext": K_ext, "L_ext": L_ext}


# --- 1 - L_ovd and the operator A -------------------------------------------------

def build_one_minus_Lovd(K_ext: int, beta: float, params: ModelParams | None = None) -> sp.csr_matrix:
    """1 - L_ovd = 1 + beta^{-1} d_q^* d_q on the first 2K_ext - 1 position modes.

    Entries are <d_q G_j, d_q G_k>_nu = sum_m Q_{mj} Q_{mk}, summed over a
    basis padded by the potential degree so that no term is missed.
    """
    params = ModelParams(beta=beta) if params is None else params
    n = 2 * K_ext - 1
    Qp = build_Q(params, K=K_ext + params.degree).toarray()[:, :n]
    M = np.eye(n) + (Qp.T @ Qp) / params.beta
    M[np.abs(M) < 1e-14 * np.abs(M).max()] = 0.0
    return sp.csr_matrix(M)


def _A_operators(params: ModelParams, K_ext: int, L_ext: int):
    """A = beta^{-1} (1 - L_ovd)^{-1} d_q^* Pi_p d_p and its adjoint, extended basis."""
    n = 2 * K_ext - 1
    Q = build_Q(params, K=K_ext).toarray()
    Mq = build_one_minus_Lovd(K_ext, params.beta, params).toarray()
    P = build_P(L_ext, params.beta)
    E0 = sp.csr_matrix(([1.0], ([0], [0])), shape=(L_ext, L_ext))
    pos = np.linalg.solve(Mq, Q.T)                     # (1 - L_ovd)^{-1} d_q^*
    A = sp.kron(E0 @ P, sp.csr_matrix(pos), format="csr") / params.beta
    A_star = sp.kron(P.T @ E0, sp.csr_matrix(pos.T), format="csr") / params.beta
    assert A.shape == (n * L_ext, n * L_ext)
    return A, A_star


def _hypo_norm_at(params: ModelParams, K_ext: int, L_ext: int) -> float:
    A, A_star = _A_operators(params, K_ext, L_ext)
    M = ((A + A_star) @ _offblock(params, K_ext, L_ext)).tocsr()
    return operator_norm_estimate(M).value


def hypo_condition_norm(params: ModelParams, K_ext: int | None = None,
                        L_ext: int | None = None, check: bool = True) -> dict:
    """||(A + A^*) L^{+-}_KL|| on a truncated extended basis, with its bound.

    The exact quantity is an infinite-dimensional norm; the value returned
    is its truncation at (K_ext, L_ext).  With ``check`` the computation is
    repeated at (K_ext + 4, L_ext + 8) and the relative change recorded.
    """
    K, L = params.K, params.L
    K_ext = max(2 * K, K + params.degree) if K_ext is None else K_ext
    L_ext = L + 4 if L_ext is None else L_ext
    if K_ext < K + params.degree or L_ext < L + 2:
        raise ValueError(f"extension ({K_ext}, {L_ext}) too small for (K, L) = ({K}, {L})")
    value = _hypo_norm_at(params, K_ext, L_ext)
    out = {
        "computed": value,
        "bound": (1.0 + np.sqrt(2.0)) * params.beta / (2.0 * K),
        "K_ext": K_ext,
        "L_ext": L_ext,
    }
    if check:
        finer = _hypo_norm_at(params, K_ext + 4, L_ext + 8)
        rel = abs(finer - value) / max(abs(finer), 1e-300)
        out["rel_change"] = rel
        out["converged"] = rel <= EXT_RTOL
        if rel > EXT_RTOL:
            warnings.warn(
                f"hypo_condition_norm changed by {rel:.2e} under extension",
                ConvergenceWarning,
                stacklevel=2,
            )
        out["computed"] = max(value, finer)
    return out


def gap_correction_term(params: ModelParams, epsilon: float | None = None,
                        eps_bar: float = 0.1) -> float:
    """eps/(1+eps) [ (1+sqrt2) beta/(2K) + (beta^3/16) t_{K-1}^2 / (1 - t_K^2) ]."""
    eps = default_epsilon(params.gamma, eps_bar) if epsilon is None else epsilon
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {eps}")
    if eps == 0.0:
        return 0.0
    K, b = params.K, params.beta
    t_prev, t_here = tail_mass_one(params, K - 1), tail_mass_one(params, K)
    bracket = (1.0 + np.sqrt(2.0)) * b / (2.0 * K) + b**3 / 16.0 * t_prev**2 / (1.0 - t_here**2)
    return eps / (1.0 + eps) * bracket


# --- spectral gap ----------------------------------------------------------------

@dataclass
class GapReport:
    gap: float
    dropped: list
    correction: float
    K: int
    L: int
    gamma: float
    beta: float
    method: str = "arnoldi"
    eigenvalues: list = field(default_factory=list, repr=False)
    dense_gap: float | None = None
    anomaly: str | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        d["dropped"] = [[float(np.real(z)), float(np.imag(z))] for z in self.dropped]
        d["eigenvalues"] = [[float(np.real(z)), float(np.imag(z))] for z in self.eigenvalues]
        return d


def _split(eigs: np.ndarray, drop_tol: float):
    small = np.abs(eigs) <= drop_tol
    return eigs[small], eigs[~small]


def spectral_gap(params: ModelParams, drop_tol: float | None = None, method: str = "auto",
                 n_eigs: int = 12, shift: float | None = None) -> GapReport:
    """Smallest real part among the eigenvalues of the rigidity matrix.

    Eigenvalues with modulus below ``drop_tol`` (default 1e-8 ||Lmat||_1)
    are the discrete remnant of the constant mode and are dropped.
    ``method``: ``"arnoldi"``, ``"dense"``, or ``"auto"`` (Arnoldi, plus a
    dense cross-check when the matrix has at most 2000 rows).
    """
    Lmat = build_rigidity(params)
    n = Lmat.shape[0]
    norm1 = float(abs(Lmat).sum(axis=0).max())
    drop_tol = 1e-8 * norm1 if drop_tol is None else drop_tol
    if method not in ("auto", "arnoldi", "dense"):
        raise ValueError(f"unknown method {method!r}")

    dense_gap = None
    if method == "dense" or (method == "auto" and n <= DENSE_GAP_MAX):
        ev = dense_eigenvalues(Lmat)
        d_dropped, d_kept = _split(ev, drop_tol)
        if d_kept.size == 0:
            raise DiagnosticsError("no eigenvalue retained after dropping")
        dense_gap = float(d_kept.real.min())

    if method == "dense":
        dropped, kept, used = d_dropped, d_kept, "dense"
    else:
        sigma = -0.5 * min(params.gamma, 1.0 / params.gamma) if shift is None else shift
        ev = eigs_shift_invert(Lmat, sigma, min(n_eigs, n - 1) if n > 1 else 1)
        dropped, kept = _split(ev, drop_tol)
        used = "arnoldi"
        if kept.size == 0:
            raise DiagnosticsError("no eigenvalue retained after dropping; raise n_eigs")

    gap = float(kept.real.min())
    anomaly = None
    if dropped.size == 0:
        anomaly = f"no eigenvalue below drop_tol={drop_tol:.2e}; smallest |lambda| = {np.abs(kept).min():.2e}"
        log.warning("spectral_gap: %s", anomaly)
    if dense_gap is not None and used == "arnoldi":
        rel = abs(gap - dense_gap) / abs(dense_gap)
        if rel > 1e-8:
            anomaly = f"Arnoldi gap {gap:.12g} differs from dense {dense_gap:.12g} (rel {rel:.1e})"
            log.warning("spectral_gap: %s", anomaly)
            gap = dense_gap
    if gap <= 0:
        raise DiagnosticsError(f"non-positive gap {gap} at K={params.K}, L={params.L}")
    return GapReport(
        gap=gap,
        dropped=list(dropped),
        correction=gap_correction_term(params),
        K=params.K,
        L=params.L,
        gamma=params.gamma,
        beta=params.beta,
        method=used,
        eigenvalues=list(kept[np.argsort(kept.real)]),
        dense_gap=dense_gap,
        anomaly=anomaly,
    )


def certificate_report(params: ModelParams, n_random: int = 100, seed: int = 0) -> dict:
    """Every certificate inequality at (params.K, params.L), as one JSON record."""
    rng = np.random.default_rng(seed)
    K, b = params.K, params.beta
    worst = 0.0
    ok = True
    for _ in range(n_random):
        phi = rng.standard_normal(2 * K + 3)
        lhs = np.linalg.norm(apply_Dpm(K, b, phi))
        rhs = Dpm_reference_norm(K, b, phi)
        ok &= lhs <= rhs * (1 + 1e-12) + 1e-15
        worst = max(worst, lhs / rhs if rhs > 0 else 0.0)
    lpm = norm_Lpm(params)
    hypo = hypo_condition_norm(params)
    luk = norm_L_uK(params)
    return {
        "K": K,
        "L": params.L,
        "gamma": params.gamma,
        "beta": b,
        "norm_Lpm": lpm,
        "hypo_condition_norm": hypo,
        "norm_L_uK": luk,
        "Dpm_ratio_max": worst,
        "Dpm_ok": bool(ok),
        "tail_mass_one": tail_mass_one(params, K),
        "gap_correction": gap_correction_term(params),
        "ok": bool(
            ok
            and lpm["computed"] <= lpm["bound"]
            and hypo["computed"] <= hypo["bound"]
            and luk["computed"] <= luk["bound"]
        ),
    }


__all__ = [
    "GapReport",
    "apply_Dpm",
    "build_one_minus_Lovd",
    "certificate_report",
    "gap_correction_term",
    "hypo_condition_norm",
    "norm_L_uK",
    "norm_Lpm",
    "spectral_gap",
    "tail_mass_one",
]
