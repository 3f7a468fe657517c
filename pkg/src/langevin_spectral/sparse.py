"""Sparse linear algebra: LU with pivot checks, shift-invert Arnoldi, 2-norms.

The LU itself is SuperLU (through scipy); ordering choice, singularity
detection, refinement and the conditioning report live here.  The
Krylov-Schur eigensolver and the norm estimator are self-contained.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import reverse_cuthill_mckee

PIVOT_RTOL = 1e-14


class SingularFactorError(np.linalg.LinAlgError):
    """Raised when a pivot falls below ``PIVOT_RTOL * max|A|``."""

    def __init__(self, message: str, min_pivot: float = 0.0, max_abs: float = 0.0):
        super().__init__(message)
        self.min_pivot = min_pivot
        self.max_abs = max_abs


class ConvergenceWarning(UserWarning):
    pass


def as_sparse(A) -> sp.csc_matrix:
    """Canonical CSC form: summed duplicates, sorted indices."""
    A = sp.csc_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


@dataclass
class LUFactors:
    """Sparse LU of a square matrix, P_r A P_c = L U (L unit lower).

    When a symmetric pre-ordering ``outer_perm`` is used the factored
    matrix is ``A[outer_perm][:, outer_perm]``.
    """

    A: sp.csc_matrix = field(repr=False)
    superlu: spla.SuperLU = field(repr=False)
    ordering: str
    outer_perm: np.ndarray | None = field(default=None, repr=False)
    min_pivot: float = 0.0
    max_pivot: float = 0.0
    _cond1: float | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def perm_r(self) -> np.ndarray:
        return self.superlu.perm_r

    @property
    def perm_c(self) -> np.ndarray:
        return self.superlu.perm_c

    @property
    def L(self) -> sp.csc_matrix:
        return self.superlu.L

    @property
    def U(self) -> sp.csc_matrix:
        return self.superlu.U

    @property
    def nnz_factors(self) -> int:
        return int(self.superlu.L.nnz + self.superlu.U.nnz - self.n)

    @property
    def fill_in(self) -> int:
        """Factor nonzeros beyond those of A (unit diagonal of L not counted)."""
        return max(0, self.nnz_factors - int(self.A.nnz))

    @property
    def norm1(self) -> float:
        return float(abs(self.A).sum(axis=0).max()) if self.A.nnz else 0.0

    @property
    def growth(self) -> float:
        """max|U| / max|A|, the triangular-solve growth factor."""
        amax = abs(self.A).max()
        return float(abs(self.superlu.U).max() / amax) if amax else 0.0

    def cond1(self) -> float:
        """Estimated 1-norm condition number ||A||_1 ||A^{-1}||_1."""
        if self._cond1 is None:
            inv = spla.LinearOperator(
                self.A.shape,
                matvec=lambda x: self._raw_solve(np.asarray(x).ravel()),
                rmatvec=lambda x: self._raw_solve(np.asarray(x).ravel(), trans="T"),
                dtype=float,
            )
            self._cond1 = float(self.norm1 * spla.onenormest(inv))
        return self._cond1

    def stats(self) -> dict:
        return {
            "n": self.n,
            "nnz_A": int(self.A.nnz),
            "nnz_factors": self.nnz_factors,
            "fill_in": self.fill_in,
            "ordering": self.ordering,
            "min_pivot": self.min_pivot,
            "max_pivot": self.max_pivot,
            "norm1": self.norm1,
        }

    def _raw_solve(self, b: np.ndarray, trans: str = "N") -> np.ndarray:
        if self.outer_perm is None:
            return self.superlu.solve(b, trans=trans)
        p = self.outer_perm
        y = self.superlu.solve(b[p], trans=trans)
        x = np.empty_like(y)
        x[p] = y
        return x

    def reconstruct(self) -> sp.csc_matrix:
        """Rebuild A from the factors (for checking P_r A P_c = L U)."""
        n = self.n
        Pr = sp.csc_matrix((np.ones(n), (self.perm_r, np.arange(n))), shape=(n, n))
        Pc = sp.csc_matrix((np.ones(n), (np.arange(n), self.perm_c)), shape=(n, n))
        B = (Pr.T @ (self.L @ self.U) @ Pc.T).tocsc()
        if self.outer_perm is None:
            return B
        inv = np.empty_like(self.outer_perm)
        inv[self.outer_perm] = np.arange(n)
        return B[inv][:, inv].tocsc()


def lu_factorize(A, ordering: str = "colamd", check: bool = True) -> LUFactors:
    """Sparse LU with partial pivoting and a fill-reducing ordering.

    ``ordering`` is ``"colamd"`` (default) or ``"rcm"`` (reverse Cuthill-McKee
    on the symmetrized pattern, applied symmetrically).  With ``check`` a
    pivot below ``PIVOT_RTOL * max|A|`` raises :class:`SingularFactorError`.
    """
    A = as_sparse(A)
    n, m = A.shape
    if n != m:
        raise ValueError(f"matrix must be square, got {A.shape}")
    max_abs = float(abs(A).max()) if A.nnz else 0.0
    if max_abs == 0.0:
        raise SingularFactorError("zero matrix", 0.0, 0.0)

    outer = None
    if ordering == "colamd":
        B, permc = A, "COLAMD"
    elif ordering == "rcm":
        pattern = (abs(A) + abs(A.T)).tocsr()
        outer = np.asarray(reverse_cuthill_mckee(pattern, symmetric_mode=True))
        B, permc = A[outer][:, outer].tocsc(), "NATURAL"
    else:
        raise ValueError(f"unknown ordering {ordering!r}")

    try:
        lu = spla.splu(B, permc_spec=permc, diag_pivot_thresh=1.0)
    except RuntimeError as exc:
        # SuperLU reports exact zero pivots as RuntimeError
        raise SingularFactorError(f"structurally or exactly singular: {exc}", 0.0, max_abs) from exc

    piv = np.abs(lu.U.diagonal())
    F = LUFactors(A=A, superlu=lu, ordering=ordering, outer_perm=outer,
                  min_pivot=float(piv.min()), max_pivot=float(piv.max()))
    if check and F.min_pivot < PIVOT_RTOL * max_abs:
        raise SingularFactorError(
            f"pivot {F.min_pivot:.3e} below {PIVOT_RTOL:g} * max|A| = {PIVOT_RTOL * max_abs:.3e}",
            F.min_pivot,
            max_abs,
        )
    return F


def lu_solve(F: LUFactors, b, refine: bool = True) -> tuple[np.ndarray, float]:
    """Solve A x = b; returns (x, ||Ax - b|| / ||b||) after one refinement step."""
    b = np.asarray(b, dtype=float)
    if b.shape != (F.n,):
        raise ValueError(f"rhs has shape {b.shape}, expected ({F.n},)")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(F.n), 0.0
    x = F._raw_solve(b)
    if refine:
        x = x + F._raw_solve(b - F.A @ x)
    res = np.linalg.norm(F.A @ x - b) / bnorm
    if not np.isfinite(res):
        raise SingularFactorError("non-finite solution", F.min_pivot)
    return x, float(res)


# --- operator 2-norm -----------------------------------------------------------

@dataclass(frozen=True)
class NormEstimate:
    value: float
    converged: bool
    iterations: int


def _as_actions(apply, apply_transpose, n):
    if callable(apply):
        if apply_transpose is None or n is None:
            raise ValueError("callable actions need apply_transpose and n")
        return apply, apply_transpose, n
    M = apply
    return (lambda x: M @ x), (lambda y: M.T @ y), M.shape[1]


def operator_norm_estimate(apply, apply_transpose=None, n: int | None = None,
                           tol: float = 1e-8, restarts: int = 3, max_iter: int = 5000,
                           block: int = 6, seed: int = 0) -> NormEstimate:
    """Largest singular value by block power iteration on A^T A.

    A small block with Rayleigh-Ritz extraction keeps convergence reasonable
    when the top singular values are close.  Each of ``restarts`` runs uses
    a fresh random start; the largest converged estimate wins.
    """
    mv, rmv, n = _as_actions(apply, apply_transpose, n)
    rng = np.random.default_rng(seed)
    b = max(1, min(block, n))
    best = NormEstimate(0.0, False, 0)
    total_it = 0
    for _ in range(max(3, restarts)):
        X, _ = np.linalg.qr(rng.standard_normal((n, b)))
        sigma = 0.0
        converged = False
        for it in range(1, max_iter + 1):
            AX = np.column_stack([mv(X[:, j]) for j in range(b)])
            if not np.all(np.isfinite(AX)):
                raise FloatingPointError("non-finite value in operator action")
            # Rayleigh-Ritz: SVD of A X gives the best approximations in span(X)
            _, s, Vt = np.linalg.svd(AX, full_matrices=False)
            X = X @ Vt.T
            sigma = float(s[0])
            if sigma == 0.0:
                converged = True
                break
            v = X[:, 0]
            w = rmv(mv(v))
            if np.linalg.norm(w - sigma**2 * v) <= tol * sigma**2:
                converged = True
                break
            W = np.column_stack([rmv(mv(X[:, j])) for j in range(b)])
            X, _ = np.linalg.qr(W)
        total_it += it
        if converged and (not best.converged or sigma > best.value):
            best = NormEstimate(sigma, True, total_it)
        elif not best.converged and sigma > best.value:
            best = NormEstimate(sigma, False, total_it)
    return NormEstimate(best.value, best.converged, total_it)


def operator_norm_2(apply, apply_transpose=None, n: int | None = None, tol: float = 1e-8,
                    **kw) -> float:
    """||A||_2 for a matrix or a pair of matrix actions; warns if unconverged."""
    est = operator_norm_estimate(apply, apply_transpose, n, tol=tol, **kw)
    if not est.converged:
        warnings.warn(
            f"operator norm estimate {est.value:.6g} did not converge to tol={tol:g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    return est.value


# --- eigenvalues ---------------------------------------------------------------

def dense_eigenvalues(A, symmetric: bool = False) -> np.ndarray:
    """Reference eigenvalues through LAPACK (small matrices only)."""
    M = A.toarray() if sp.issparse(A) else np.asarray(A)
    if symmetric:
        return np.linalg.eigvalsh(M).astype(complex)
    return np.linalg.eigvals(M)


class _ShiftInvert:
    """x -> (A - sigma I)^{-1} x, real factorization when sigma is real."""

    def __init__(self, A: sp.csc_matrix, sigma: complex, ordering: str):
        n = A.shape[0]
        self.real = np.imag(sigma) == 0.0
        if self.real:
            M = A - float(np.real(sigma)) * sp.identity(n, format="csc")
            self.F = lu_factorize(M, ordering=ordering)
        else:
            M = (A.astype(complex) - sigma * sp.identity(n, format="csc")).tocsc()
            max_abs = abs(M).max()
            try:
                self.lu = spla.splu(M, permc_spec="COLAMD", diag_pivot_thresh=1.0)
            except RuntimeError as exc:
                raise SingularFactorError(str(exc), 0.0, max_abs) from exc
            piv = np.abs(self.lu.U.diagonal()).min()
            if piv < PIVOT_RTOL * max_abs:
                raise SingularFactorError("singular at shift", piv, max_abs)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.real:
            return self.F._raw_solve(x.real) + 1j * self.F._raw_solve(x.imag)
        return self.lu.solve(x)


def _arnoldi_extend(op, V, H, start, stop, rng):
    """Extend an Arnoldi relation A V[:, :j] = V[:, :j+1] H[:j+1, :j] up to ``stop``."""
    n = V.shape[0]
    for j in range(start, stop):
        w = op(V[:, j])
        # classical Gram-Schmidt, done twice
        h = V[:, : j + 1].conj().T @ w
        w = w - V[:, : j + 1] @ h
        h2 = V[:, : j + 1].conj().T @ w
        w = w - V[:, : j + 1] @ h2
        h = h + h2
        H[: j + 1, j] = h
        beta = np.linalg.norm(w)
        if beta > 1e-12 * max(1.0, np.linalg.norm(h)):
            H[j + 1, j] = beta
            V[:, j + 1] = w / beta
            continue
        # invariant subspace: continue from a fresh direction
        H[j + 1, j] = 0.0
        if j + 1 >= n:
            return j + 1
        for _ in range(5):
            r = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            r -= V[:, : j + 1] @ (V[:, : j + 1].conj().T @ r)
            r -= V[:, : j + 1] @ (V[:, : j + 1].conj().T @ r)
            nr = np.linalg.norm(r)
            if nr > 1e-8:
                V[:, j + 1] = r / nr
                break
        else:
            return j + 1
    return stop


def eigs_shift_invert(A, shift: complex, n_eigs: int, tol: float = 1e-10,
                      subspace: int | None = None, max_restarts: int = 200,
                      seed: int = 0, ordering: str = "colamd",
                      return_vectors: bool = False):
    """Eigenvalues of A closest to ``shift`` by Krylov-Schur on (A - shift)^{-1}.

    Returned eigenvalues are sorted by distance to the shift, each verified
    by ||A v - lambda v|| <= tol * ||A||_1.
    """
    A = as_sparse(A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if not 1 <= n_eigs <= n:
        raise ValueError(f"n_eigs must be in [1, {n}]")
    norm1 = float(abs(A).sum(axis=0).max()) or 1.0
    rng = np.random.default_rng(seed)

    sigma = complex(shift)
    op = None
    for attempt in range(4):
        try:
            op = _ShiftInvert(A, sigma if sigma.imag else sigma.real, ordering)
            break
        except SingularFactorError:
            bump = 1e-6 * (1.0 + abs(sigma)) * (1 + attempt)
            sigma = sigma + bump * (1.0 + 0.5j if sigma.imag else 1.0)
    if op is None:
        raise SingularFactorError(f"cannot factorize A - sigma I near shift {shift}")

    m = min(n, max(40, 4 * n_eigs) if subspace is None else subspace)
    keep = min(m - 1, max(n_eigs + 1, m // 2)) if m > n_eigs else n_eigs
    V = np.zeros((n, m + 1), dtype=complex)
    H = np.zeros((m + 1, m), dtype=complex)
    v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    V[:, 0] = v0 / np.linalg.norm(v0)
    k = 0

    lam = vecs = None
    for _ in range(max_restarts):
        _arnoldi_extend(op, V, H, k, m, rng)
        Hm = H[:m, :m]
        T, Z = scipy.linalg.schur(Hm, output="complex")
        theta = np.diag(T)
        order = np.argsort(-np.abs(theta))
        # check the wanted Ritz pairs directly against A
        w_theta, Y = np.linalg.eig(Hm)
        w_order = np.argsort(-np.abs(w_theta))[:n_eigs]
        cand = sigma + 1.0 / w_theta[w_order]
        X = V[:, :m] @ Y[:, w_order]
        X /= np.linalg.norm(X, axis=0)
        res = np.linalg.norm(A @ X - X * cand, axis=0)
        if np.all(res <= tol * norm1):
            lam, vecs = cand, X
            break
        if m >= n:
            # full space already: nothing to restart with
            lam, vecs = cand, X
            break
        # Krylov-Schur restart: keep the leading `keep` Schur vectors
        thr = np.abs(theta[order[keep - 1]])
        T, Z, sdim = scipy.linalg.schur(Hm, output="complex", sort=lambda x: abs(x) >= thr)
        k = int(min(max(sdim, n_eigs), m - 1))
        Vk = V[:, :m] @ Z[:, :k]
        b = H[m, m - 1] * Z[m - 1, :k]
        V[:, :k] = Vk
        V[:, k] = V[:, m]
        V[:, k + 1:] = 0.0
        H[:] = 0.0
        H[:k, :k] = T[:k, :k]
        H[k, :k] = b
    else:
        warnings.warn("shift-invert Arnoldi hit max_restarts", ConvergenceWarning, stacklevel=2)
        lam, vecs = cand, X

    res = np.linalg.norm(A @ vecs - vecs * lam, axis=0)
    if np.any(res > tol * norm1):
        warnings.warn(
            f"eigenpair residual {res.max():.2e} exceeds {tol:g} * ||A||_1",
            ConvergenceWarning,
            stacklevel=2,
        )
    idx = np.argsort(np.abs(lam - shift), kind="stable")
    lam, vecs = lam[idx], vecs[:, idx]
    if return_vectors:
        return lam, vecs
    return lam


# --- MatrixMarket ----------------------------------------------------------------

def write_matrix_market(path, A, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment, precision=17)


def read_matrix_market(path) -> sp.csr_matrix:
    return sp.csr_matrix(scipy.io.mmread(str(path)))
