import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from langevin_spectral.assembly import GalerkinSystem, build_P, build_rigidity
from langevin_spectral.model import ModelParams, zeta
from langevin_spectral.sparse import (
    ConvergenceWarning,
    SingularFactorError,
    dense_eigenvalues,
    eigs_shift_invert,
    lu_factorize,
    lu_solve,
    operator_norm_2,
    operator_norm_estimate,
    read_matrix_market,
    write_matrix_market,
)


def test_identity_has_no_fill():
    F = lu_factorize(sp.identity(6))
    assert F.fill_in == 0
    np.testing.assert_array_equal(F.L.toarray(), np.eye(6))
    np.testing.assert_array_equal(F.U.toarray(), np.eye(6))


def test_permutation_matrix_needs_pivoting():
    F = lu_factorize(np.array([[0.0, 1.0], [1.0, 0.0]]))
    x, res = lu_solve(F, np.array([2.0, 3.0]))
    np.testing.assert_allclose(x, [3.0, 2.0])
    assert res == 0.0


@pytest.mark.parametrize("ordering", ["colamd", "rcm"])
def test_factors_reconstruct_matrix(ordering):
    A = GalerkinSystem.build(ModelParams(K=5, L=8)).augmented()
    F = lu_factorize(A, ordering=ordering)
    assert abs(F.reconstruct() - A).max() < 1e-13
    np.testing.assert_allclose(F.L.diagonal(), 1.0)


def test_augmented_nonsingular_but_plain_rigidity_singular():
    s = GalerkinSystem.build(ModelParams(K=5, L=8))
    F = lu_factorize(s.augmented())
    with pytest.raises(SingularFactorError) as exc:
        lu_factorize(s.Lmat)
    # pivot statistics differ by far more than six orders of magnitude
    assert exc.value.min_pivot < 1e-6 * F.min_pivot
    assert F.cond1() < 1e4


def test_singular_error_on_tiny_pivot():
    A = np.diag([1.0, 1.0, 1e-17])
    with pytest.raises(SingularFactorError):
        lu_factorize(A)
    F = lu_factorize(A, check=False)
    assert F.min_pivot == pytest.approx(1e-17)


def test_lu_solve_trivial_cases():
    F = lu_factorize(sp.identity(5))
    b = np.arange(5.0)
    np.testing.assert_array_equal(lu_solve(F, b)[0], b)
    x, res = lu_solve(F, np.zeros(5))
    assert np.all(x == 0) and res == 0.0
    with pytest.raises(ValueError):
        lu_solve(F, np.zeros(4))
    with pytest.raises(ValueError):
        lu_factorize(sp.random(3, 4, density=0.5))


def test_band_system_residual(rng):
    n = 100
    diags = [rng.standard_normal(n - abs(o)) for o in range(-3, 4)]
    A = sp.diags(diags, list(range(-3, 4))) + 10 * sp.identity(n)
    F = lu_factorize(A)
    _, res = lu_solve(F, rng.standard_normal(n))
    assert res <= 1e-12


@settings(max_examples=10, deadline=None)
@given(K=st.integers(2, 12), L=st.integers(2, 30), gamma=st.floats(0.05, 20), seed=st.integers(0, 99))
def test_refined_residual_on_galerkin_systems(K, L, gamma, seed):
    A = GalerkinSystem.build(ModelParams(K=K, L=L, gamma=gamma)).augmented()
    F = lu_factorize(A)
    b = np.random.default_rng(seed).standard_normal(A.shape[0])
    assert lu_solve(F, b)[1] <= 1e-10


def test_large_banded_residual(rng):
    # size ~ 2e5 with bandwidth 2K+2
    A = GalerkinSystem.build(ModelParams(K=50, L=2000)).augmented()
    assert A.shape[0] > 1.9e5
    _, res = lu_solve(lu_factorize(A), rng.standard_normal(A.shape[0]))
    assert res <= 1e-10


def test_operator_norm_simple():
    assert operator_norm_2(np.diag([1.0, 2.0, 3.0])) == pytest.approx(3.0, rel=1e-8)
    u = np.ones(4) / 2
    v = np.array([0.6, 0.8, 0.0])
    assert operator_norm_2(np.outer(u, v)) == pytest.approx(1.0, rel=1e-8)
    P = build_P(10, 1.0)
    assert operator_norm_2(P) == pytest.approx(3.0, rel=1e-8)


def test_operator_norm_with_actions():
    M = np.arange(12.0).reshape(3, 4)
    val = operator_norm_2(lambda x: M @ x, lambda y: M.T @ y, n=4)
    assert val == pytest.approx(np.linalg.norm(M, 2), rel=1e-8)


@settings(max_examples=15, deadline=None)
@given(n=st.integers(2, 100), seed=st.integers(0, 10_000))
def test_operator_norm_known_svd(n, seed):
    r = np.random.default_rng(seed)
    U, _ = np.linalg.qr(r.standard_normal((n, n)))
    V, _ = np.linalg.qr(r.standard_normal((n, n)))
    s = np.sort(r.uniform(0.1, 10.0, n))[::-1]
    M = U @ np.diag(s) @ V.T
    assert operator_norm_2(M) == pytest.approx(s[0], rel=1e-6)


def test_operator_norm_flags_non_convergence():
    M = np.diag([1.0, 0.999999, 0.5])
    with pytest.warns(ConvergenceWarning):
        operator_norm_2(M, max_iter=1, block=1)
    assert not operator_norm_estimate(M, max_iter=1, block=1).converged


def test_eigs_diagonal():
    lam = eigs_shift_invert(sp.diags([0.0, 1.0, 5.0]), 0.1, 2)
    np.testing.assert_allclose(lam, [0.0, 1.0], atol=1e-12)


def test_eigs_rotation_complex_pair():
    lam = eigs_shift_invert(np.array([[0.0, -1.0], [1.0, 0.0]]), 0.1, 2)
    np.testing.assert_allclose(sorted(lam, key=lambda z: z.imag), [-1j, 1j], atol=1e-12)


def test_eigs_flat_k0_block():
    gamma, L = 1.5, 12
    p = ModelParams.flat(K=3, L=L, gamma=gamma)
    A = build_rigidity(p)
    idx = zeta(np.zeros(L, dtype=int), np.arange(L), 3)
    block = A[idx][:, idx]
    lam = eigs_shift_invert(block, -0.3, L)
    np.testing.assert_allclose(np.sort(lam.real), gamma * np.arange(L), atol=1e-8)


@settings(max_examples=10, deadline=None)
@given(n=st.integers(5, 200), seed=st.integers(0, 1000))
def test_eigs_symmetric_matches_dense(n, seed):
    r = np.random.default_rng(seed)
    B = r.standard_normal((n, n))
    A = (B + B.T) / 2
    k = min(6, n - 1)
    lam = eigs_shift_invert(A, 0.05, k, tol=1e-10)
    assert np.abs(lam.imag).max() <= 1e-10
    ref = dense_eigenvalues(A, symmetric=True).real
    ref = ref[np.argsort(np.abs(ref - 0.05))][:k]
    np.testing.assert_allclose(np.sort(lam.real), np.sort(ref), atol=1e-8)


def test_eigs_nonsymmetric_rigidity_matches_dense():
    A = build_rigidity(ModelParams(K=6, L=20))
    lam = eigs_shift_invert(A, -0.5, 8)
    ref = dense_eigenvalues(A)
    ref = ref[np.argsort(np.abs(ref + 0.5))][:8]
    for z in lam:
        assert np.abs(ref - z).min() < 1e-8


def test_eigs_retries_singular_shift():
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConvergenceWarning)
        lam = eigs_shift_invert(sp.diags([0.0, 1.0, 5.0]), 1.0, 1)
    assert lam[0] == pytest.approx(1.0, abs=1e-10)


def test_matrix_market_roundtrip(tmp_path):
    A = build_rigidity(ModelParams(K=3, L=4))
    write_matrix_market(tmp_path / "a.mtx", A)
    B = read_matrix_market(tmp_path / "a.mtx")
    assert abs(A - B).max() == 0.0
