import numpy as np
import pytest

from bdi.kernels import (
    GramMatrix,
    KernelSpec,
    NumericalError,
    chol_inverse_gram,
    chol_psd,
    chol_solve,
    gp_posterior,
    gram,
    rbf,
    rbf_matrix,
    tri_inv_lower,
)


def test_rbf_known_values():
    spec = KernelSpec(1.0)
    assert rbf([0.0, 0.0], [0.0, 0.0], spec) == 1.0
    # squared distance 2 at unit lengthscale
    assert rbf([0.0, 0.0], [np.sqrt(2.0), 0.0], spec) == pytest.approx(
        np.exp(-1.0), rel=1e-15)
    # squared distance 1 at unit lengthscale
    assert rbf([0.5], [1.5], spec) == pytest.approx(np.exp(-0.5), rel=1e-15)
    # lengthscale 2 quarters the exponent
    assert rbf([0.0], [2.0], KernelSpec(2.0)) == pytest.approx(
        np.exp(-0.5), rel=1e-15)


def test_rbf_matrix_matches_pairwise():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(7, 3))
    Y = rng.normal(size=(4, 3))
    spec = KernelSpec(1.3)
    K = rbf_matrix(X, Y, spec)
    for i in range(7):
        for j in range(4):
            assert K[i, j] == pytest.approx(rbf(X[i], Y[j], spec), rel=1e-12)


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(0.0)
    with pytest.raises(ValueError):
        KernelSpec(-1.0)
    with pytest.raises(ValueError):
        KernelSpec(1.0, jitter=-1e-9)
    assert KernelSpec(1.0).with_lengthscale(2.5).lengthscale == 2.5


def test_gram_diagonal_and_symmetry():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20, 2))
    g = gram(X, KernelSpec(0.8, jitter=1e-8))
    assert np.allclose(g.values, g.values.T)
    assert np.allclose(np.diag(g.values), 1.0 + g.jitter)
    assert g.n == 20


def test_gram_handles_duplicate_points():
    X = np.zeros((6, 2))
    g = gram(X, KernelSpec(1.0, jitter=1e-8))
    assert g.jitter >= 1e-8
    assert np.all(np.isfinite(g.chol))
    assert np.abs(g.chol @ g.chol.T - g.values).max() < 1e-12


def test_chol_psd_escalates_jitter():
    # exactly singular: factorization needs a strictly positive diagonal bump
    A = np.ones((4, 4))
    L, used = chol_psd(A, 0.0, what="singular matrix")
    assert used > 0.0
    assert np.abs(L @ L.T - (A + used * np.eye(4))).max() < 1e-12


def test_chol_psd_raises_past_cap():
    A = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalue -1, cap is 1e-2
    with pytest.raises(NumericalError):
        chol_psd(A, 1e-8, what="test matrix")


def test_chol_psd_rejects_non_finite():
    with pytest.raises(NumericalError):
        chol_psd(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_chol_solve_matches_dense():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(9, 9))
    A = X @ X.T + 9 * np.eye(9)
    b = rng.normal(size=9)
    L, _ = chol_psd(A)
    assert np.abs(chol_solve(L, b) - np.linalg.solve(A, b)).max() < 1e-10


def test_triangular_helpers_match_dense():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(15, 15))
    A = X @ X.T + 15 * np.eye(15)
    L, _ = chol_psd(A)
    assert np.abs(tri_inv_lower(L) - np.linalg.inv(L)).max() < 1e-10
    assert np.abs(chol_inverse_gram(L) - np.linalg.inv(A)).max() < 1e-10


def test_gram_matrix_log_det():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(12, 2))
    g = gram(X, KernelSpec(1.1))
    sign, logdet = np.linalg.slogdet(g.values)
    assert sign > 0
    assert g.log_det == pytest.approx(logdet, rel=1e-10)


def test_gp_posterior_matches_dense_solve():
    rng = np.random.default_rng(5)
    X = rng.uniform(-2, 2, size=(25, 2))
    y = np.sin(X[:, 0]) + 0.1 * rng.normal(size=25)
    noise = rng.uniform(0.05, 0.3, size=25)
    spec = KernelSpec(1.0)
    g = gram(X, spec)
    xq = np.array([0.3, -0.4])
    k_star = rbf_matrix(xq[None, :], X, spec)[0]

    mean, var = gp_posterior(g, noise, y, k_star, 1.0)
    A = g.values + np.diag(noise)
    mean_o = k_star @ np.linalg.solve(A, y)
    var_o = 1.0 - k_star @ np.linalg.solve(A, k_star)
    assert mean == pytest.approx(mean_o, abs=1e-10)
    assert var == pytest.approx(var_o, abs=1e-10)


def test_gp_posterior_variance_shrinks_with_data():
    # posterior variance at a training point never exceeds the prior
    rng = np.random.default_rng(6)
    X = rng.uniform(-2, 2, size=(15, 1))
    y = rng.normal(size=15)
    spec = KernelSpec(1.0)
    g = gram(X, spec)
    for i in range(15):
        k_star = rbf_matrix(X[i][None, :], X, spec)[0]
        _, var = gp_posterior(g, np.full(15, 0.1), y, k_star, 1.0)
        assert 0.0 <= var <= 1.0 + 1e-12


def test_gp_posterior_input_validation():
    g = gram(np.array([[0.0], [1.0]]), KernelSpec(1.0))
    with pytest.raises(ValueError):
        gp_posterior(g, np.array([0.1]), np.zeros(2), np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        gp_posterior(g, np.array([-0.1, 0.1]), np.zeros(2), np.zeros(2), 1.0)


def test_gram_matrix_solve():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(10, 2))
    g = gram(X, KernelSpec(1.0))
    b = rng.normal(size=10)
    assert np.abs(g.values @ g.solve(b) - b).max() < 1e-9


def test_rbf_matrix_shape_errors():
    with pytest.raises(ValueError):
        rbf_matrix(np.zeros((3, 2)), np.zeros((3, 3)), KernelSpec(1.0))
    with pytest.raises(ValueError):
        rbf(np.zeros(2), np.zeros(3), KernelSpec(1.0))
