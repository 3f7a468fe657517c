import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from langevin_spectral.assembly import (
    GalerkinSystem,
    build_augmented,
    build_N,
    build_P,
    build_Q,
    build_rigidity,
    build_U,
    observable_sobolev,
    observable_velocity,
    rigidity_triplets,
)
from langevin_spectral.model import (
    ModelParams,
    eval_G,
    eval_G_derivative,
    eval_H_all,
    eval_potential,
    eval_potential_derivative,
    fourier_coefficients_of_one,
    gauss_hermite_kappa,
    partition_function_nu,
    torus_nodes,
    zeta,
)

S8 = 1.0 / (2.0 * np.sqrt(2.0))


def test_Q_entries_default_potential():
    Q = build_Q(ModelParams(K=4)).toarray()
    assert Q[1, 0] == pytest.approx(S8, abs=1e-15)
    assert Q[0, 1] == pytest.approx(S8, abs=1e-15)
    assert Q[2, 1] == pytest.approx(1.0, abs=1e-15)
    assert Q[4, 1] == pytest.approx(-0.25, abs=1e-15)
    assert Q[1, 2] == pytest.approx(-1.0, abs=1e-15)
    assert Q[3, 2] == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("beta", [0.7, 1.0, 2.5])
def test_Q_columns_follow_derivative_formulas(beta):
    # d_q G_{2k}   = -b/4 G_{2k-3} - k G_{2k-1} + b/4 G_{2k+1}
    # d_q G_{2k-1} =  b/4 G_{2k-2} + k G_{2k}   - b/4 G_{2k+2}
    K = 8
    Q = build_Q(ModelParams(K=K + 2, beta=beta)).toarray()
    for k in range(2, K):
        col = np.zeros(Q.shape[0])
        col[2 * k - 3], col[2 * k - 1], col[2 * k + 1] = -beta / 4, -k, beta / 4
        np.testing.assert_allclose(Q[:, 2 * k], col, atol=1e-14)
        col = np.zeros(Q.shape[0])
        col[2 * k - 2], col[2 * k], col[2 * k + 2] = beta / 4, k, -beta / 4
        np.testing.assert_allclose(Q[:, 2 * k - 1], col, atol=1e-14)


@settings(max_examples=15, deadline=None)
@given(
    a=st.lists(st.floats(-1.5, 1.5), min_size=0, max_size=3),
    b=st.lists(st.floats(-1.5, 1.5), min_size=0, max_size=3),
    beta=st.floats(0.3, 3.0),
)
def test_Q_analytic_matches_quadrature(a, b, beta):
    p = ModelParams(beta=beta, v_cos=tuple(a), v_sin=tuple(b), K=7)
    Qa = build_Q(p).toarray()
    Qq = build_Q(p, method="quadrature").toarray()
    np.testing.assert_allclose(Qa, Qq, atol=1e-10)


def test_Q_flat_potential_is_pure_rotation():
    Q = build_Q(ModelParams.flat(K=4)).toarray()
    expected = np.zeros((7, 7))
    for k in range(1, 4):
        expected[2 * k, 2 * k - 1] = k
        expected[2 * k - 1, 2 * k] = -k
    np.testing.assert_allclose(Q, expected, atol=1e-15)


def test_P_and_N():
    P = build_P(10, 1.0).toarray()
    assert np.allclose(np.diag(P, 1), np.sqrt(np.arange(1, 10)))
    assert np.count_nonzero(P) == 9
    assert np.linalg.norm(P, 2) == pytest.approx(3.0)
    np.testing.assert_array_equal(build_N(4).diagonal(), [0, 1, 2, 3])
    with pytest.raises(ValueError):
        build_P(1, 1.0)


def _generator_entry_quadrature(p: ModelParams, i: int, j: int) -> float:
    """-<e_i, L e_j>_mu with L f = p d_q f - V' d_p f + gamma(-p d_p f + beta^{-1} d_p^2 f)."""
    K, L, b, g = p.K, p.L, p.beta, p.gamma
    n = 2 * K - 1
    ki, li = i % n, i // n
    kj, lj = j % n, j // n
    q, wq = torus_nodes(256)
    Z = partition_function_nu(p)
    rho = wq * np.exp(-b * eval_potential(p, q)) / Z
    y, wp = gauss_hermite_kappa(60, b)
    H = eval_H_all(L + 2, y, b)
    # d_p H_l = sqrt(b l) H_{l-1}
    dH = np.sqrt(b * lj) * H[lj - 1] if lj > 0 else 0 * y
    d2H = np.sqrt(b * lj) * np.sqrt(b * (lj - 1)) * H[lj - 2] if lj > 1 else 0 * y
    Gi, Gj = eval_G(ki, q, p, Z), eval_G(kj, q, p, Z)
    dGj = eval_G_derivative(kj, q, p, Z)
    dV = eval_potential_derivative(p, q)
    term = (
        np.outer(dGj, y * H[lj])
        - np.outer(dV * Gj, dH)
        + g * np.outer(Gj, -y * dH + d2H / b)
    )
    return -float(np.einsum("a,b,a,b,ab->", rho, wp, Gi, H[li], term))


def test_rigidity_matches_generator_quadrature():
    p = ModelParams(K=3, L=4, gamma=0.7, beta=1.3, v_sin=(0.4,))
    A = build_rigidity(p).toarray()
    B = np.array([[_generator_entry_quadrature(p, i, j) for j in range(p.size)] for i in range(p.size)])
    np.testing.assert_allclose(A, B, atol=1e-10)


@settings(max_examples=10, deadline=None)
@given(
    a=st.lists(st.floats(-1, 1), max_size=2),
    b=st.lists(st.floats(-1, 1), max_size=2),
    gamma=st.floats(0.01, 100),
)
def test_rigidity_symmetric_part_is_friction(a, b, gamma):
    p = ModelParams(v_cos=tuple(a), v_sin=tuple(b), gamma=gamma, K=4, L=5)
    A = build_rigidity(p)
    sym = (A + A.T).toarray() / 2
    expected = gamma * np.kron(np.diag(np.arange(5.0)), np.eye(7))
    np.testing.assert_allclose(sym, expected, atol=1e-12 * max(1, gamma))


def test_rigidity_permuted_assembly_identical(rng):
    p = ModelParams(K=5, L=7)
    r, c, v = rigidity_triplets(build_Q(p), build_P(p.L, p.beta), p.gamma, p.beta)
    perm = rng.permutation(r.size)
    B = sp.coo_matrix((v[perm], (r[perm], c[perm])), shape=(p.size, p.size)).tocsr()
    assert abs(B - build_rigidity(p)).max() < 1e-15


def test_rigidity_flat_k0_block_diagonal():
    p = ModelParams.flat(K=3, L=10, gamma=2.0)
    A = build_rigidity(p).toarray()
    idx = zeta(np.zeros(10, dtype=int), np.arange(10), 3)
    np.testing.assert_allclose(A[np.ix_(idx, idx)], np.diag(2.0 * np.arange(10)), atol=1e-15)


def test_rigidity_storage_is_canonical():
    A = build_rigidity(ModelParams(K=4, L=6))
    assert A.has_sorted_indices and A.has_canonical_format


def test_U_and_augmented():
    p = ModelParams(K=4, L=5)
    U = build_U(p)
    assert np.linalg.norm(U) == pytest.approx(1.0)
    assert np.all(U[p.n_modes_q :] == 0.0)
    g = fourier_coefficients_of_one(p)
    np.testing.assert_allclose(U[: p.n_modes_q], g / np.linalg.norm(g))
    Aug = build_augmented(build_rigidity(p), U).toarray()
    assert Aug.shape == (p.size + 1, p.size + 1)
    np.testing.assert_allclose(Aug[:-1, -1], U)
    np.testing.assert_allclose(Aug[-1, :-1], U)
    assert Aug[-1, -1] == 0.0
    with pytest.raises(ValueError):
        build_augmented(build_rigidity(p), U[:-1])


def test_observables():
    p = ModelParams(K=3, L=4, beta=2.0)
    Y = observable_velocity(p).as_matrix()
    g = fourier_coefficients_of_one(p)
    np.testing.assert_allclose(Y[1], g / np.sqrt(2.0))
    assert np.all(Y[[0, 2, 3]] == 0)
    R = observable_sobolev(p).as_matrix()
    assert R[0, 0] == 1.0 and R[0, 1] == 1.0
    assert R[2, 4] == pytest.approx(4 ** -2.5 * 2 ** -1.5)


def test_galerkin_system_caches_factorization():
    s = GalerkinSystem.build(ModelParams(K=3, L=4))
    assert s.factorization() is s.factorization()
    assert s.augmented() is s.augmented()
    with pytest.raises(ValueError):
        s.observable("nope")
