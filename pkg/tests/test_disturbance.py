import numpy as np
import pytest

from bdi.kernels import KernelSpec, gram, rbf_matrix
from bdi.disturbance import (
    ConstantDisturbance,
    DisturbanceModel,
    NoDisturbance,
    compute_q_g,
    effective_noise,
)


def _setup(n=15, d=2, seed=0, jitter=1e-10):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-3, 3, size=(n, 2))
    lam = rng.uniform(0.2, 2.0, size=(n, d))
    mu0 = rng.normal(size=d)
    spec = KernelSpec(1.3, jitter=jitter)
    return X, lam, mu0, spec


def test_half_precision_gives_prior_mean():
    # Lambda = 1/2 exactly cancels the mean shift: mu_g = mu0 everywhere
    X, _, _, spec = _setup()
    g = gram(X, spec)
    mu0 = np.array([-3.5, 0.7])
    mu_g, var = compute_q_g(g, np.full((15, 2), 0.5), mu0)
    assert np.abs(mu_g - mu0[None, :]).max() < 1e-12
    assert np.all(var > 0) and np.all(var <= 1.0 + 1e-9)


def test_compute_q_g_matches_dense_oracle():
    X, lam, mu0, spec = _setup()
    g = gram(X, spec)
    mu_g, var, covs = compute_q_g(g, lam, mu0, full_cov=True)
    K = g.values
    for d in range(lam.shape[1]):
        mu_o = K @ (lam[:, d] - 0.5) + mu0[d]
        cov_o = np.linalg.inv(np.linalg.inv(K) + np.diag(lam[:, d]))
        assert np.abs(mu_g[:, d] - mu_o).max() < 1e-10
        assert np.abs(var[:, d] - np.diag(cov_o)).max() < 1e-10
        assert np.abs(covs[d] - cov_o).max() < 1e-9
        # posterior covariance satisfies Sigma (K^-1 + Lambda) = I
        resid = covs[d] @ (np.linalg.inv(K) + np.diag(lam[:, d]))
        assert np.abs(resid - np.eye(K.shape[0])).max() < 1e-7


def test_compute_q_g_validates_inputs():
    X, lam, mu0, spec = _setup()
    g = gram(X, spec)
    with pytest.raises(ValueError):
        compute_q_g(g, lam[:, 0], mu0)
    with pytest.raises(ValueError):
        compute_q_g(g, np.zeros_like(lam), mu0)
    with pytest.raises(ValueError):
        compute_q_g(g, lam, mu0[:1])


def test_effective_noise_formula():
    mu_g = np.array([[0.0, -2.0]])
    var = np.array([[0.5, 1.0]])
    h = effective_noise(mu_g, var)
    assert h[0, 0] == pytest.approx(np.exp(-0.25), rel=1e-12)
    assert h[0, 1] == pytest.approx(np.exp(-2.5), rel=1e-12)
    assert np.all(h > 0)


def test_predict_matches_training_posterior():
    # predictive moments at the training inputs reproduce compute_q_g
    X, lam, mu0, spec = _setup(jitter=1e-12)
    g = gram(X, spec)
    mu_g, var = compute_q_g(g, lam, mu0)
    model = DisturbanceModel(X, spec, lam, mu0, ceiling=4.0)
    mu_p, var_p = model.predict(X)
    assert np.abs(mu_p - mu_g).max() < 1e-8
    assert np.abs(var_p - var).max() < 1e-7


def test_predict_matches_dense_oracle():
    X, lam, mu0, spec = _setup(n=12, jitter=1e-12)
    model = DisturbanceModel(X, spec, lam, mu0, ceiling=10.0)
    rng = np.random.default_rng(5)
    Q = rng.uniform(-3, 3, size=(6, 2))
    mu_p, var_p = model.predict(Q)
    K = rbf_matrix(X, X, spec)
    np.fill_diagonal(K, 1.0 + spec.jitter)
    k_star = rbf_matrix(Q, X, spec)
    for d in range(lam.shape[1]):
        mu_o = k_star @ (lam[:, d] - 0.5) + mu0[d]
        A = K + np.diag(1.0 / lam[:, d])
        var_o = 1.0 - np.einsum("ij,ij->i", k_star, np.linalg.solve(A, k_star.T).T)
        assert np.abs(mu_p[:, d] - mu_o).max() < 1e-10
        assert np.abs(var_p[:, d] - var_o).max() < 1e-10


def test_far_query_reverts_to_prior():
    X, lam, mu0, spec = _setup()
    model = DisturbanceModel(X, spec, lam, mu0, ceiling=100.0)
    mu_p, var_p = model.predict(np.array([[500.0, -500.0]]))
    assert np.abs(mu_p[0] - mu0).max() < 1e-10
    assert np.abs(var_p[0] - 1.0).max() < 1e-10
    level = model.injection_level(np.array([500.0, -500.0]))
    assert np.allclose(level[0], np.minimum(np.exp(mu0), 100.0))


def test_injection_level_is_clamped_mean():
    X, lam, mu0, spec = _setup()
    model = DisturbanceModel(X, spec, lam, mu0, ceiling=1e9)
    rng = np.random.default_rng(7)
    Q = rng.uniform(-3, 3, size=(5, 2))
    mu_p, _ = model.predict(Q)
    assert np.abs(model.injection_level(Q) - np.exp(mu_p)).max() < 1e-10
    tight = DisturbanceModel(X, spec, lam, mu0, ceiling=1e-6)
    assert np.all(tight.injection_level(Q) <= 1e-6 + 1e-18)


def test_constant_disturbance():
    c = ConstantDisturbance([0.3, 9.0], ceiling=4.0)
    out = c.injection_level(np.zeros((3, 2)))
    assert out.shape == (3, 2)
    assert np.allclose(out, [0.3, 4.0])  # second dim clamped
    with pytest.raises(ValueError):
        ConstantDisturbance([-0.1], ceiling=4.0)


def test_no_disturbance_is_zero():
    nd = NoDisturbance(dim=2)
    out = nd.injection_level(np.ones((4, 2)))
    assert out.shape == (4, 2)
    assert np.all(out == 0.0)
